//! Value functionals and exponent-bound solvers.
//!
//! Every value is handled through its base-2 logarithm. Solvers look for
//! `ρ ∈ [2, 3]` with `log V_ρ(T) = log target` by bisection; all functionals
//! here are nondecreasing in ρ.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::entropy::{
    bisect_root, marginals_determine, maximize_1d, maximize_concave_simplex, maximize_multistart, EntropyProgram,
    EntropyTerm, SolverOptions,
};
use crate::error::{Error, Result};
use crate::partition::{cw_power, Annotation, EstimatedPartitionedTensor, ValueExpr};

/// Which side of the laser bound to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// With the compatibility penalty: an achievable value.
    Lower,
    /// Without the penalty.
    Upper,
}

impl Mode {
    pub fn tag(self) -> &'static str {
        match self {
            Mode::Lower => "lower",
            Mode::Upper => "upper",
        }
    }
}

type MemoKey = (String, i64, Mode);

fn quantize(rho: f64) -> i64 {
    (rho * 1e12).round() as i64
}

#[derive(Serialize, Deserialize)]
struct MemoLine {
    fingerprint: String,
    rho_e12: i64,
    mode: Mode,
    bits: u64,
}

/// Solver options plus a memo of nested constituent values.
///
/// The memo maps `(fingerprint, ρ quantized to 1e-12, mode)` to the exact
/// bits of `log2` of the value. With a cache directory, entries are appended
/// as JSON lines to `values.jsonl` and reloaded on construction; on
/// duplicate keys the last line wins.
pub struct ValueContext {
    pub options: SolverOptions,
    memo: Mutex<HashMap<MemoKey, f64>>,
    sink: Option<Mutex<File>>,
    cache_file: Option<PathBuf>,
}

pub const CACHE_FILE_NAME: &str = "values.jsonl";

impl ValueContext {
    pub fn new(options: SolverOptions) -> Self {
        ValueContext { options, memo: Mutex::new(HashMap::new()), sink: None, cache_file: None }
    }

    /// Context backed by an on-disk memo in `dir` (created if missing).
    pub fn with_cache_dir(options: SolverOptions, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE_NAME);
        let mut memo = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                // A torn final line from an interrupted run is skipped.
                if let Ok(m) = serde_json::from_str::<MemoLine>(&line) {
                    memo.insert((m.fingerprint, m.rho_e12, m.mode), f64::from_bits(m.bits));
                }
            }
        }
        let sink = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(ValueContext { options, memo: Mutex::new(memo), sink: Some(Mutex::new(sink)), cache_file: Some(path) })
    }

    pub fn cache_file(&self) -> Option<&Path> {
        self.cache_file.as_deref()
    }

    pub fn memo_len(&self) -> usize {
        self.memo.lock().len()
    }

    fn lookup(&self, key: &MemoKey) -> Option<f64> {
        self.memo.lock().get(key).copied()
    }

    fn store(&self, key: MemoKey, v: f64) -> Result<()> {
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&MemoLine { fingerprint: key.0.clone(), rho_e12: key.1, mode: key.2, bits: v.to_bits() })?;
            let mut f = sink.lock();
            writeln!(f, "{line}")?;
        }
        self.memo.lock().insert(key, v);
        Ok(())
    }

    /// `log2` of a value expression at ρ; nested sub-tensors are evaluated
    /// with the laser bound of the given mode.
    pub fn log2_value(&self, v: &ValueExpr, rho: f64, mode: Mode) -> Result<f64> {
        match v {
            ValueExpr::Nested(t) => self.constituent_value(t, rho, mode),
            ValueExpr::Product(f) => f.iter().map(|e| self.log2_value(e, rho, mode)).sum(),
            other => Ok(other.log2_simple(rho).expect("simple value")),
        }
    }

    /// Memoized `log2` laser value of a nested constituent.
    pub fn constituent_value(&self, t: &Arc<EstimatedPartitionedTensor>, rho: f64, mode: Mode) -> Result<f64> {
        let key = (t.fingerprint().to_string(), quantize(rho), mode);
        if let Some(v) = self.lookup(&key) {
            return Ok(v);
        }
        let v = laser_value(self, t, rho, mode)?.log2_value;
        self.store(key, v)?;
        Ok(v)
    }
}

impl Default for ValueContext {
    fn default() -> Self {
        ValueContext::new(SolverOptions::default())
    }
}

/// Removes the on-disk memo in `dir`, returning whether a file existed.
pub fn clear_cache(dir: &Path) -> Result<bool> {
    let p = dir.join(CACHE_FILE_NAME);
    if p.exists() {
        fs::remove_file(p)?;
        Ok(true)
    } else {
        Ok(false)
    }
}

fn entropy_h(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>()
}

/// `log2` of the closed-form value of `tcw(q)`:
/// `max_α H((2−α)/3, 2α/3, (1−α)/3) + (ρα/3) log q`.
pub fn cw_value_closed_form(q: u32, rho: f64) -> f64 {
    let lq = (q as f64).log2();
    let f = |a: f64| entropy_h(&[(2.0 - a) / 3.0, 2.0 * a / 3.0, (1.0 - a) / 3.0]) + rho * a / 3.0 * lq;
    maximize_1d(f, 0.0, 1.0, 1e-12).1
}

/// `log2` of the merging upper bound for `tcw(q)`: the closed form plus
/// `((ρ−2)/3) H((1−α)/2, α, (1−α)/2)` inside the maximum. The underlying
/// statement assumes `q ≥ 2`; for `q = 1` the same formula is evaluated.
pub fn merging_ub_cw(q: u32, rho: f64) -> f64 {
    let lq = (q as f64).log2();
    let f = |a: f64| {
        entropy_h(&[(2.0 - a) / 3.0, 2.0 * a / 3.0, (1.0 - a) / 3.0])
            + rho * a / 3.0 * lq
            + (rho - 2.0) / 3.0 * entropy_h(&[(1.0 - a) / 2.0, a, (1.0 - a) / 2.0])
    };
    maximize_1d(f, 0.0, 1.0, 1e-12).1
}

/// Optimizer outcome with the optimizing distribution over the support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueSolution {
    pub log2_value: f64,
    pub distribution: Vec<(Annotation, f64)>,
    pub iterations: usize,
    pub gap: f64,
    /// Whether the compatibility penalty was active in the objective.
    pub penalized: bool,
    /// Start index that produced the reported optimum.
    pub best_start: usize,
}

struct Layout {
    support: Vec<Annotation>,
    lift: Vec<(usize, f64)>,
    dim: usize,
}

fn layout(t: &EstimatedPartitionedTensor) -> Layout {
    if t.symmetric() {
        let orbits = t.orbits();
        let mut support = Vec::new();
        let mut lift = Vec::new();
        for (o, members) in orbits.iter().enumerate() {
            for a in members {
                support.push(*a);
                lift.push((o, 1.0 / members.len() as f64));
            }
        }
        Layout { support, lift, dim: orbits.len() }
    } else {
        let support: Vec<Annotation> = t.support().into_iter().collect();
        let lift = (0..support.len()).map(|i| (i, 1.0)).collect();
        let dim = support.len();
        Layout { support, lift, dim }
    }
}

fn marginal_map(support: &[Annotation], l: usize) -> Vec<Vec<(usize, f64)>> {
    let mut rows: BTreeMap<u32, Vec<(usize, f64)>> = BTreeMap::new();
    for (j, s) in support.iter().enumerate() {
        rows.entry(s[l]).or_default().push((j, 1.0));
    }
    rows.into_values().collect()
}

fn log_values(ctx: &ValueContext, t: &EstimatedPartitionedTensor, support: &[Annotation], rho: f64, mode: Mode) -> Result<Vec<f64>> {
    support.iter().map(|a| ctx.log2_value(&t.constituent(a).expect("support member").value, rho, mode)).collect()
}

/// Laser bound for a tight estimated partitioned tensor:
/// `max_P Σ_l H(P_l)/3 + E_P log Val_ρ − Γ(P)` (lower) or the same without
/// `Γ` (upper). Symmetric tensors are optimized over symmetric
/// distributions, one weight per rotation orbit, with the objective
/// `H(P_1) + E_P log Val_ρ [− Γ(P)]`.
///
/// The penalized objective is not concave; it is maximized from several
/// starts, the first being the unpenalized optimum, and the best value found
/// is reported. That value is attained by a distribution and is therefore a
/// valid lower bound.
/// The unpenalized laser objective for `t` at ρ, and whether the given mode
/// adds the compatibility penalty (it is skipped when marginals determine
/// the distribution, since the penalty then vanishes).
pub fn laser_program(ctx: &ValueContext, t: &EstimatedPartitionedTensor, rho: f64, mode: Mode) -> Result<(EntropyProgram, bool)> {
    if t.tightness().is_none() {
        return Err(Error::ClassViolation("laser bound needs a tight tensor".into()));
    }
    let lay = layout(t);
    let lv = log_values(ctx, t, &lay.support, rho, mode)?;
    let terms = if t.symmetric() {
        vec![EntropyTerm { coef: 1.0, map: marginal_map(&lay.support, 0) }]
    } else {
        (0..3).map(|l| EntropyTerm { coef: 1.0 / 3.0, map: marginal_map(&lay.support, l) }).collect()
    };
    let penalized = mode == Mode::Lower && !marginals_determine(&lay.support);
    Ok((EntropyProgram::new(lay.dim, lay.support, lay.lift, terms, lv, false, ctx.options.clone()), penalized))
}

pub fn laser_value(ctx: &ValueContext, t: &EstimatedPartitionedTensor, rho: f64, mode: Mode) -> Result<ValueSolution> {
    let (mut upper, penalized) = laser_program(ctx, t, rho, mode)?;
    let m_up = maximize_concave_simplex(&mut upper, None, &ctx.options)?;
    let (m, best_start) = if penalized {
        let mut lower = upper.clone();
        lower.penalty = true;
        maximize_multistart(&mut lower, Some(&m_up.point), &ctx.options)?
    } else {
        (m_up, 0)
    };
    let p = upper.lift_point(&m.point);
    Ok(ValueSolution {
        log2_value: m.value,
        distribution: upper.support.iter().cloned().zip(p).collect(),
        iterations: m.iterations,
        gap: m.gap,
        penalized,
        best_start,
    })
}

/// General merging upper bound for a symmetric tensor in class 𝒯:
/// `max_{P sym} H(P_m) + E_P log Val_ρ + ((ρ−2)/3) P0 H(P̃)`, with nested
/// constituent values taken in upper mode.
///
/// `P0 H(P̃) = (3/2) Hpersp(u)` where `u_0 = P_m(0) − P0/3` and
/// `u_i = P_m(i) − P*_m(i)` are linear in `P`, so the objective is concave.
pub fn merging_program(ctx: &ValueContext, t: &EstimatedPartitionedTensor, rho: f64) -> Result<EntropyProgram> {
    if !t.symmetric() {
        return Err(Error::ClassViolation("merging bound needs a symmetric tensor".into()));
    }
    if !t.class_t_membership() {
        return Err(Error::ClassViolation("tensor is not in class T".into()));
    }
    let lay = layout(t);
    let lv = log_values(ctx, t, &lay.support, rho, Mode::Upper)?;
    let (suppz, _) = t.split_support();
    let mut rows: BTreeMap<u32, Vec<(usize, f64)>> = BTreeMap::new();
    rows.insert(0, Vec::new());
    for (j, s) in lay.support.iter().enumerate() {
        if !suppz.contains(s) {
            continue;
        }
        let c = if s[0] == 0 { 1.0 - 1.0 / 3.0 } else { 1.0 };
        rows.entry(s[0]).or_default().push((j, c));
        if s[0] != 0 {
            rows.get_mut(&0).expect("row 0").push((j, -1.0 / 3.0));
        }
    }
    let terms = vec![
        EntropyTerm { coef: 1.0, map: marginal_map(&lay.support, 0) },
        EntropyTerm { coef: (rho - 2.0) / 2.0, map: rows.into_values().collect() },
    ];
    Ok(EntropyProgram::new(lay.dim, lay.support, lay.lift, terms, lv, false, ctx.options.clone()))
}

pub fn merging_ub_general(ctx: &ValueContext, t: &EstimatedPartitionedTensor, rho: f64) -> Result<ValueSolution> {
    let mut prog = merging_program(ctx, t, rho)?;
    let m = maximize_concave_simplex(&mut prog, None, &ctx.options)?;
    let p = prog.lift_point(&m.point);
    Ok(ValueSolution {
        log2_value: m.value,
        distribution: prog.support.iter().cloned().zip(p).collect(),
        iterations: m.iterations,
        gap: m.gap,
        penalized: false,
        best_start: 0,
    })
}

/// Structured result of an exponent-bound computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema_version: u32,
    pub kind: String,
    pub q: Option<u32>,
    pub r: Option<u32>,
    pub method: String,
    pub rho: f64,
    pub target: f64,
    pub tolerance: f64,
    pub distribution: Vec<DistributionEntry>,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub annotation: String,
    pub weight: f64,
}

pub const SCHEMA_VERSION: u32 = 1;

/// Exponent-bound method tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LaserLower,
    LaserUpper,
    MergingUbClosed,
    MergingUbGeneral,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::LaserLower => "laser-lower",
            Method::LaserUpper => "laser-upper",
            Method::MergingUbClosed => "merging-ub-closed",
            Method::MergingUbGeneral => "merging-ub-general",
        }
    }
}

/// Target constant `(q + 2)^{2^r}`.
pub fn target(q: u32, r: u32) -> Result<u128> {
    (q as u128 + 2)
        .checked_pow(1u32.checked_shl(r).unwrap_or(u32::MAX))
        .ok_or_else(|| Error::ResourceLimit { what: "target constant".into(), needed: u128::MAX, limit: u128::MAX })
}

/// Solves `g(ρ) = log2 target` on `[2, 3]`. When the whole interval lies on
/// one side of the target, the nearer endpoint is returned and the side is
/// recorded; `g(3) < target` means the bound is vacuous.
fn solve_rho(
    mut g: impl FnMut(f64) -> Result<f64>,
    log_target: f64,
    width: f64,
    diagnostics: &mut BTreeMap<String, serde_json::Value>,
) -> Result<f64> {
    let g3 = g(3.0)?;
    if g3 < log_target {
        diagnostics.insert("clamped".into(), "value at rho=3 is below the target".into());
        return Ok(3.0);
    }
    let g2 = g(2.0)?;
    if g2 >= log_target {
        diagnostics.insert("clamped".into(), "value at rho=2 reaches the target".into());
        return Ok(2.0);
    }
    bisect_root(g, 2.0, 3.0, log_target, width)
}

fn distribution_entries(d: &[(Annotation, f64)]) -> Vec<DistributionEntry> {
    d.iter()
        .map(|(a, w)| DistributionEntry { annotation: format!("({},{},{})", a[0], a[1], a[2]), weight: *w })
        .collect()
}

fn report(kind: &str, q: Option<u32>, r: Option<u32>, method: &str, rho: f64, target: f64, tolerance: f64, start: Instant) -> BoundReport {
    BoundReport {
        schema_version: SCHEMA_VERSION,
        kind: kind.into(),
        q,
        r,
        method: method.into(),
        rho,
        target,
        tolerance,
        distribution: vec![],
        diagnostics: BTreeMap::new(),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Exponent bound from the laser method on `r` canonical squarings of
/// `tcw(q)`: solves `V_ρ = (q+2)^{2^r}`.
pub fn omega_bound_laser(ctx: &ValueContext, q: u32, r: u32, mode: Mode) -> Result<BoundReport> {
    let start = Instant::now();
    let t = cw_power(q, r)?;
    let tgt = target(q, r)?;
    let log_target = (tgt as f64).log2();
    let mut diagnostics = BTreeMap::new();
    let rho = solve_rho(|rho| Ok(laser_value(ctx, &t, rho, mode)?.log2_value), log_target, ctx.options.bisection_width, &mut diagnostics)?;
    let sol = laser_value(ctx, &t, rho, mode)?;
    let method = if mode == Mode::Lower { Method::LaserLower } else { Method::LaserUpper };
    let mut rep = report("bound", Some(q), Some(r), method.tag(), rho, tgt as f64, ctx.options.bisection_width, start);
    diagnostics.insert("log2_value_at_rho".into(), sol.log2_value.into());
    diagnostics.insert("frank_wolfe_gap".into(), sol.gap.into());
    diagnostics.insert("iterations".into(), sol.iterations.into());
    diagnostics.insert("penalized".into(), sol.penalized.into());
    diagnostics.insert("best_start".into(), sol.best_start.into());
    diagnostics.insert("support_size".into(), t.support().len().into());
    diagnostics.insert("mode".into(), mode.tag().into());
    rep.distribution = distribution_entries(&sol.distribution);
    rep.diagnostics = diagnostics;
    rep.seconds = start.elapsed().as_secs_f64();
    Ok(rep)
}

/// Limit of the laser method with merging on `r` canonical squarings of
/// `tcw(q)`: solves the general merging upper bound `= (q+2)^{2^r}`. For
/// `r = 0` the closed form is solved too and the difference recorded.
pub fn omega_limit_merging(ctx: &ValueContext, q: u32, r: u32) -> Result<BoundReport> {
    let start = Instant::now();
    let t = cw_power(q, r)?;
    let tgt = target(q, r)?;
    let log_target = (tgt as f64).log2();
    let mut diagnostics = BTreeMap::new();
    let rho = solve_rho(|rho| Ok(merging_ub_general(ctx, &t, rho)?.log2_value), log_target, ctx.options.bisection_width, &mut diagnostics)?;
    let sol = merging_ub_general(ctx, &t, rho)?;
    if r == 0 {
        let mut d2 = BTreeMap::new();
        let closed = solve_rho(|rho| Ok(merging_ub_cw(q, rho)), log_target, ctx.options.bisection_width, &mut d2)?;
        diagnostics.insert("closed_form_rho".into(), closed.into());
        diagnostics.insert("closed_form_difference".into(), (closed - rho).abs().into());
    }
    if q == 1 {
        diagnostics.insert("note".into(), "the merging bound is stated for q >= 2; q = 1 uses the same formula".into());
    }
    let (suppz, _) = t.split_support();
    let p0: f64 = sol.distribution.iter().filter(|(a, _)| suppz.contains(a)).map(|(_, w)| w).sum();
    diagnostics.insert("p0".into(), p0.into());
    diagnostics.insert("log2_value_at_rho".into(), sol.log2_value.into());
    diagnostics.insert("frank_wolfe_gap".into(), sol.gap.into());
    diagnostics.insert("iterations".into(), sol.iterations.into());
    diagnostics.insert("support_size".into(), t.support().len().into());
    let mut rep = report("bound", Some(q), Some(r), Method::MergingUbGeneral.tag(), rho, tgt as f64, ctx.options.bisection_width, start);
    rep.distribution = distribution_entries(&sol.distribution);
    rep.diagnostics = diagnostics;
    rep.seconds = start.elapsed().as_secs_f64();
    Ok(rep)
}

/// Solves `16^{ρ/3} + 9^{ρ/3} = 17`.
pub fn schonhage_example() -> Result<BoundReport> {
    let start = Instant::now();
    let width = 1e-12;
    let rho = bisect_root(|r| Ok(16f64.powf(r / 3.0) + 9f64.powf(r / 3.0)), 2.0, 3.0, 17.0, width)?;
    let mut rep = report("schonhage", None, None, "direct-sum", rho, 17.0, width, start);
    rep.diagnostics.insert("terms".into(), "<4,1,4> + <1,9,1>".into());
    Ok(rep)
}

/// Nested sub-tensors reachable from `t`, deduplicated by fingerprint.
pub fn nested_subtensors(t: &EstimatedPartitionedTensor) -> Vec<Arc<EstimatedPartitionedTensor>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut stack: Vec<Arc<EstimatedPartitionedTensor>> =
        t.constituents().values().flat_map(|c| c.value.nested().into_iter().cloned()).collect();
    while let Some(n) = stack.pop() {
        if seen.insert(n.fingerprint().to_string()) {
            stack.extend(n.constituents().values().flat_map(|c| c.value.nested().into_iter().cloned()));
            out.push(n);
        }
    }
    out
}
