//! Numerical kernel: entropies, concave maximization on the probability
//! simplex, maximum entropy with fixed marginals, one-dimensional search and
//! monotone root finding.
//!
//! Logarithms are base 2 and `0 log 0 = 0`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::Annotation;

/// Tolerances and budgets shared by all solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop when the Frank–Wolfe gap `max_i g_i − ⟨w, g⟩` drops below this.
    pub gap_tolerance: f64,
    pub max_iterations: usize,
    /// Largest gap accepted when no ascent step is representable.
    pub stall_gap_tolerance: f64,
    /// Marginal residual at which proportional fitting stops.
    pub ipf_tolerance: f64,
    pub ipf_max_sweeps: usize,
    /// Bracket width at which bisection stops.
    pub bisection_width: f64,
    /// Starting points for objectives carrying a compatibility penalty.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tolerance: 1e-10,
            max_iterations: 200_000,
            stall_gap_tolerance: 1e-6,
            ipf_tolerance: 1e-12,
            ipf_max_sweeps: 100_000,
            bisection_width: 1e-9,
            restarts: 16,
            seed: 0,
        }
    }
}

fn xlog2x(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// Shannon entropy in bits of a probability vector.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if let Some(x) = p.iter().find(|&&x| x < 0.0 || x.is_nan()) {
        return Err(Error::Domain(format!("negative or undefined probability {x}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("probabilities sum to {s}, not 1")));
    }
    Ok(-p.iter().map(|&x| xlog2x(x)).sum::<f64>())
}

/// Perspective of entropy: `S log S − Σ u_i log u_i` with `S = Σ u_i`.
/// Equals `S · H(u / S)` and is concave and 1-homogeneous on `u ≥ 0`.
pub fn entropy_perspective(u: &[f64]) -> f64 {
    let s: f64 = u.iter().map(|&x| x.max(0.0)).sum();
    xlog2x(s) - u.iter().map(|&x| xlog2x(x.max(0.0))).sum::<f64>()
}

/// Sparse linear map: row `i` is a list of `(column, coefficient)`.
pub type SparseMap = Vec<Vec<(usize, f64)>>;

fn apply(map: &SparseMap, p: &[f64]) -> Vec<f64> {
    map.iter().map(|row| row.iter().map(|&(j, c)| c * p[j]).sum()).collect()
}

/// Objective on the simplex `{w ≥ 0, Σ w = 1}`.
pub trait SimplexObjective {
    fn dim(&self) -> usize;
    /// Value and gradient at `w`. The gradient may include any constant
    /// shift, which is irrelevant on the simplex.
    fn value_grad(&mut self, w: &[f64]) -> (f64, Vec<f64>);
    fn value(&mut self, w: &[f64]) -> f64 {
        self.value_grad(w).0
    }
    /// Whether the objective is smooth and concave in the interior, so that
    /// finite-difference Hessians of the gradient are meaningful.
    fn smooth(&self) -> bool {
        true
    }
}

/// Result of a simplex maximization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Maximum {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Frank–Wolfe gap at the returned point; an upper bound on the
    /// suboptimality when the objective is concave.
    pub gap: f64,
}

/// Exponentiated-gradient ascent with adaptive step and sufficient-increase
/// backtracking, stopped by the Frank–Wolfe gap. Smooth objectives switch to
/// a log-barrier Newton phase once the gap is small or progress stalls; its
/// point replaces the iterate only if it lowers the gap without lowering the
/// value.
pub fn maximize_concave_simplex(obj: &mut dyn SimplexObjective, start: Option<&[f64]>, opts: &SolverOptions) -> Result<Maximum> {
    let n = obj.dim();
    if n == 0 {
        return Err(Error::Invalid("empty simplex".into()));
    }
    let mut w: Vec<f64> = match start {
        Some(s) if s.len() == n => {
            let mixed: Vec<f64> = s.iter().map(|&x| x.max(0.0) + 1e-12).collect();
            let t: f64 = mixed.iter().sum();
            mixed.iter().map(|x| x / t).collect()
        }
        Some(_) => return Err(Error::Invalid("start point has the wrong dimension".into())),
        None => vec![1.0 / n as f64; n],
    };
    if n == 1 {
        let (v, _) = obj.value_grad(&w);
        return Ok(Maximum { point: w, value: v, iterations: 0, gap: 0.0 });
    }
    let (mut f, mut g) = obj.value_grad(&w);
    let mut eta = 1.0;
    let mut gap = f64::INFINITY;
    let mut next_barrier = 0;
    let mut forced = false;
    let mut stall_retry = true;
    for it in 0..opts.max_iterations {
        let avg: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
        gap = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - avg;
        if gap <= opts.gap_tolerance {
            return Ok(Maximum { point: w, value: f, iterations: it, gap });
        }
        if obj.smooth() && it >= next_barrier && (gap < BARRIER_TRIGGER_GAP || it >= BARRIER_TRIGGER_ITERATIONS || forced) {
            forced = false;
            next_barrier = it + BARRIER_TRIGGER_ITERATIONS;
            if let Some((nw, nf, ng)) = barrier_newton(obj, &w, gap, opts) {
                let ngap = fw_gap(&nw, &ng);
                if ngap < gap && nf >= f - 1e-12 * f.abs().max(1.0) {
                    w = nw;
                    f = nf;
                    g = ng;
                    stall_retry = true;
                    continue;
                }
            }
        }
        let mut improved = false;
        for _ in 0..60 {
            let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut cand: Vec<f64> = w.iter().zip(&g).map(|(x, gi)| x * (eta * (gi - gmax)).exp()).collect();
            let s: f64 = cand.iter().sum();
            cand.iter_mut().for_each(|x| *x /= s);
            let dir: f64 = cand.iter().zip(&w).zip(&g).map(|((c, x), gi)| (c - x) * (gi - avg)).sum();
            let (fc, gc) = obj.value_grad(&cand);
            // For a concave objective `f(c) − f(w) ≥ ⟨g(c), c − w⟩`, so a
            // nonnegative slope at the candidate certifies ascent even when
            // the increase is below floating-point resolution of `f`.
            let gc_avg: f64 = cand.iter().zip(&gc).map(|(c, gi)| c * gi).sum();
            let slope: f64 = cand.iter().zip(&w).zip(&gc).map(|((c, x), gi)| (c - x) * (gi - gc_avg)).sum();
            let certified = slope >= 0.0 && fc >= f - 1e-12 * f.abs().max(1.0);
            if fc.is_finite() && ((fc > f && fc >= f + 0.1 * dir) || certified) {
                w = cand;
                f = fc;
                g = gc;
                eta *= 1.5;
                improved = true;
                stall_retry = true;
                break;
            }
            eta *= 0.5;
        }
        if !improved && obj.smooth() && stall_retry {
            // One interior-point attempt before declaring a stall.
            stall_retry = false;
            forced = true;
            next_barrier = 0;
            continue;
        }
        if !improved {
            // No step increases the objective in floating point. Near a
            // maximum the value error is quadratic in the gap, so a gap at
            // the stall tolerance still pins the value to rounding level.
            if gap <= opts.stall_gap_tolerance {
                return Ok(Maximum { point: w, value: f, iterations: it, gap });
            }
            return Err(Error::NonConvergence { iterations: it, gap, best_value: f, best_point: w });
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iterations, gap, best_value: f, best_point: w })
}

/// Gap below which the exponentiated-gradient loop hands over to the
/// interior-point phase.
const BARRIER_TRIGGER_GAP: f64 = 1e-3;
/// Iterations after which the interior-point phase is tried regardless of
/// the gap, and the spacing between attempts.
const BARRIER_TRIGGER_ITERATIONS: usize = 2000;
/// Weight mixed in uniformly so that the interior-point phase starts strictly
/// inside the simplex.
const BARRIER_INTERIOR_MIX: f64 = 1e-10;

fn fw_gap(w: &[f64], g: &[f64]) -> f64 {
    let avg: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
    g.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - avg
}

/// Log-barrier interior-point maximization of a smooth concave objective,
/// started from `w0` whose Frank–Wolfe gap is `gap0`.
///
/// For each barrier weight μ, Newton steps maximize `f(w) + μ Σ log w_i` in
/// the coordinates `w_j` (`j ≠ k`, with `w_k = 1 − Σ w_j` for the heaviest
/// `k`). The Hessian of `f` in these coordinates comes from central
/// differences of the gradient along `e_j − e_k`. At the barrier optimum
/// the Frank–Wolfe gap is at most `n μ`, so μ is decreased until that bound
/// is a tenth of the gap tolerance.
fn barrier_newton(
    obj: &mut dyn SimplexObjective,
    w0: &[f64],
    gap0: f64,
    opts: &SolverOptions,
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    use nalgebra::{DMatrix, DVector};
    let n = w0.len();
    let nf = n as f64;
    let mut w: Vec<f64> = w0.iter().map(|x| (1.0 - BARRIER_INTERIOR_MIX) * x + BARRIER_INTERIOR_MIX / nf).collect();
    let (mut f, mut g) = obj.value_grad(&w);
    if !f.is_finite() {
        return None;
    }
    let phi = |f: f64, w: &[f64], mu: f64| f + mu * w.iter().map(|x| x.ln()).sum::<f64>();
    let mut mu = (gap0 / nf).max(1e-9);
    let mu_final = 0.1 * opts.gap_tolerance / nf;
    loop {
        for _ in 0..60 {
            let k = (0..n).max_by(|&a, &b| w[a].total_cmp(&w[b]))?;
            let others: Vec<usize> = (0..n).filter(|&j| j != k).collect();
            let m = others.len();
            let r = DVector::from_iterator(m, others.iter().map(|&j| (g[j] + mu / w[j]) - (g[k] + mu / w[k])));
            let mut h = DMatrix::<f64>::zeros(m, m);
            for (c, &j) in others.iter().enumerate() {
                let step = 1e-6 * w[j].min(w[k]);
                let mut plus = w.clone();
                plus[j] += step;
                plus[k] -= step;
                let mut minus = w.clone();
                minus[j] -= step;
                minus[k] += step;
                let (fp, gp) = obj.value_grad(&plus);
                let (fm, gm) = obj.value_grad(&minus);
                if !fp.is_finite() || !fm.is_finite() {
                    return None;
                }
                for (rr, &i) in others.iter().enumerate() {
                    h[(rr, c)] = ((gp[i] - gp[k]) - (gm[i] - gm[k])) / (2.0 * step);
                }
            }
            let mut h = (&h + h.transpose()) * 0.5;
            let bk = mu / (w[k] * w[k]);
            for (c, &j) in others.iter().enumerate() {
                for rr in 0..m {
                    h[(rr, c)] -= bk;
                }
                h[(c, c)] -= mu / (w[j] * w[j]);
            }
            // Modified Newton: curvature is clamped to keep an ascent
            // direction when difference noise makes `−H` indefinite.
            let eig = (-h).symmetric_eigen();
            let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            if !(top > 0.0) {
                return None;
            }
            let mut d = DVector::<f64>::zeros(m);
            for (i, &lam) in eig.eigenvalues.iter().enumerate() {
                let v = eig.eigenvectors.column(i);
                d += v * (v.dot(&r) / lam.max(1e-12 * top));
            }
            let decrement = r.dot(&d);
            let mut dir = vec![0.0; n];
            for (c, &j) in others.iter().enumerate() {
                dir[j] = d[c];
                dir[k] -= d[c];
            }
            let mut t: f64 = 1.0;
            for (i, &di) in dir.iter().enumerate() {
                if di < 0.0 {
                    t = t.min(-0.99 * w[i] / di);
                }
            }
            let phi0 = phi(f, &w, mu);
            let mut moved = false;
            for _ in 0..50 {
                let cand: Vec<f64> = w.iter().zip(&dir).map(|(x, di)| x + t * di).collect();
                if cand.iter().all(|&x| x > 0.0) {
                    let (fc, gc) = obj.value_grad(&cand);
                    if fc.is_finite() {
                        let slope: f64 = dir.iter().zip(&gc).zip(&cand).map(|((di, gi), x)| di * (gi + mu / x)).sum();
                        let phic = phi(fc, &cand, mu);
                        if phic >= phi0 + 0.25 * t * decrement || (slope >= 0.0 && phic >= phi0) {
                            w = cand;
                            f = fc;
                            g = gc;
                            moved = true;
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            if !moved || decrement < 1e-14 * mu.max(1e-3) {
                break;
            }
        }
        if mu <= mu_final {
            break;
        }
        mu = (mu * 0.1).max(mu_final);
    }
    Some((w, f, g))
}

/// Maximum-entropy distribution on `support` with the given three marginals,
/// by iterative proportional fitting. `warm` must be strictly positive and of
/// product form on the support (e.g. a previous output) or is ignored.
pub fn max_entropy_with_marginals(
    support: &[Annotation],
    targets: &[BTreeMap<u32, f64>; 3],
    warm: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, f64)> {
    let m = support.len();
    let mut q: Vec<f64> = match warm {
        Some(w) if w.len() == m && w.iter().all(|&x| x > 0.0) => w.to_vec(),
        _ => vec![1.0 / m as f64; m],
    };
    let mut residual = f64::INFINITY;
    for _ in 0..opts.ipf_max_sweeps {
        for l in 0..3 {
            let mut cur: BTreeMap<u32, f64> = BTreeMap::new();
            for (s, &x) in support.iter().zip(&q) {
                *cur.entry(s[l]).or_default() += x;
            }
            for (s, x) in support.iter().zip(q.iter_mut()) {
                let c = cur[&s[l]];
                let t = targets[l].get(&s[l]).copied().unwrap_or(0.0);
                *x = if c > 0.0 { *x * t / c } else { 0.0 };
            }
        }
        residual = marginal_residual(support, &q, targets);
        if residual < opts.ipf_tolerance {
            break;
        }
    }
    if residual >= opts.ipf_tolerance.max(1e-9) {
        return Err(Error::NonConvergence { iterations: opts.ipf_max_sweeps, gap: residual, best_value: f64::NAN, best_point: q });
    }
    let h = -q.iter().map(|&x| xlog2x(x)).sum::<f64>();
    Ok((q, h))
}

fn marginal_residual(support: &[Annotation], q: &[f64], targets: &[BTreeMap<u32, f64>; 3]) -> f64 {
    let mut worst: f64 = 0.0;
    for l in 0..3 {
        let mut cur: BTreeMap<u32, f64> = BTreeMap::new();
        for (s, &x) in support.iter().zip(q) {
            *cur.entry(s[l]).or_default() += x;
        }
        for (k, t) in &targets[l] {
            worst = worst.max((cur.get(k).copied().unwrap_or(0.0) - t).abs());
        }
    }
    worst
}

/// Marginals of a distribution on annotation triples.
pub fn marginals(support: &[Annotation], p: &[f64]) -> [BTreeMap<u32, f64>; 3] {
    let mut out: [BTreeMap<u32, f64>; 3] = Default::default();
    for (s, &x) in support.iter().zip(p) {
        for l in 0..3 {
            *out[l].entry(s[l]).or_default() += x;
        }
    }
    out
}

/// Compatibility penalty `Γ(P) = H(Q*) − H(P)` where `Q*` maximizes entropy
/// among distributions on the support with the marginals of `P`.
pub fn compatibility_penalty(support: &[Annotation], p: &[f64], opts: &SolverOptions) -> Result<f64> {
    let (_, hq) = max_entropy_with_marginals(support, &marginals(support, p), None, opts)?;
    Ok(hq - entropy(p)?)
}

/// Whether distributions on the support are determined by their marginals
/// (then the compatibility penalty vanishes identically).
pub fn marginals_determine(support: &[Annotation]) -> bool {
    let m = support.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for l in 0..3 {
        let keys: BTreeSet<u32> = support.iter().map(|s| s[l]).collect();
        for k in keys {
            rows.push(support.iter().map(|s| if s[l] == k { 1.0 } else { 0.0 }).collect());
        }
    }
    rank(rows, m) == m
}

fn rank(mut rows: Vec<Vec<f64>>, cols: usize) -> usize {
    let mut r = 0;
    for c in 0..cols {
        let Some(piv) = (r..rows.len()).max_by(|&a, &b| rows[a][c].abs().total_cmp(&rows[b][c].abs())) else {
            break;
        };
        if rows[piv][c].abs() < 1e-9 {
            continue;
        }
        rows.swap(r, piv);
        let pr = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r {
                let f = row[c] / pr[c];
                if f != 0.0 {
                    row.iter_mut().zip(&pr).for_each(|(x, y)| *x -= f * y);
                }
            }
        }
        r += 1;
    }
    r
}

/// `coef · entropy_perspective(map · P)`.
#[derive(Clone, Debug)]
pub struct EntropyTerm {
    pub coef: f64,
    pub map: SparseMap,
}

/// Objective `Σ_t coef_t · Hpersp(A_t P) + ⟨c, P⟩ − [Γ(P)]` over
/// `P = lift(w)`, with `w` on the simplex.
///
/// The lift `P[s] = factor_s · w[index_s]` lets symmetric problems run over
/// one weight per rotation orbit.
#[derive(Clone, Debug)]
pub struct EntropyProgram {
    pub dim: usize,
    pub support: Vec<Annotation>,
    pub lift: Vec<(usize, f64)>,
    pub terms: Vec<EntropyTerm>,
    pub linear: Vec<f64>,
    pub penalty: bool,
    pub options: SolverOptions,
    warm_q: Option<Vec<f64>>,
    penalty_failures: usize,
}

impl EntropyProgram {
    pub fn new(dim: usize, support: Vec<Annotation>, lift: Vec<(usize, f64)>, terms: Vec<EntropyTerm>, linear: Vec<f64>, penalty: bool, options: SolverOptions) -> Self {
        assert_eq!(support.len(), lift.len());
        assert_eq!(support.len(), linear.len());
        EntropyProgram { dim, support, lift, terms, linear, penalty, options, warm_q: None, penalty_failures: 0 }
    }

    pub fn lift_point(&self, w: &[f64]) -> Vec<f64> {
        self.lift.iter().map(|&(i, c)| c * w[i]).collect()
    }

    /// Value and gradient with respect to `P`.
    fn value_grad_p(&mut self, p: &[f64]) -> (f64, Vec<f64>) {
        let mut val: f64 = p.iter().zip(&self.linear).map(|(a, b)| a * b).sum();
        let mut grad = self.linear.clone();
        for t in &self.terms {
            let u = apply(&t.map, p);
            let s: f64 = u.iter().sum();
            val += t.coef * entropy_perspective(&u);
            for (row, &ui) in t.map.iter().zip(&u) {
                if row.is_empty() {
                    continue;
                }
                let d = if ui > 0.0 { (s / ui).log2() } else { 60.0 };
                for &(j, c) in row {
                    grad[j] += t.coef * c * d;
                }
            }
        }
        if self.penalty {
            let targets = marginals(&self.support, p);
            match max_entropy_with_marginals(&self.support, &targets, self.warm_q.as_deref(), &self.options) {
                Ok((q, hq)) => {
                    let hp = -p.iter().map(|&x| xlog2x(x)).sum::<f64>();
                    val -= hq - hp;
                    for (j, (&qj, &pj)) in q.iter().zip(p).enumerate() {
                        let lq = if qj > 0.0 { qj.log2() } else { -200.0 };
                        let lp = if pj > 0.0 { pj.log2() } else { -200.0 };
                        grad[j] += lq - lp;
                    }
                    self.warm_q = Some(q);
                }
                Err(_) => {
                    self.penalty_failures += 1;
                    self.warm_q = None;
                    return (f64::NEG_INFINITY, grad);
                }
            }
        }
        (val, grad)
    }

    pub fn penalty_failures(&self) -> usize {
        self.penalty_failures
    }
}

impl SimplexObjective for EntropyProgram {
    fn dim(&self) -> usize {
        self.dim
    }

    fn smooth(&self) -> bool {
        !self.penalty
    }

    fn value_grad(&mut self, w: &[f64]) -> (f64, Vec<f64>) {
        let p = self.lift_point(w);
        let (v, gp) = self.value_grad_p(&p);
        let mut g = vec![0.0; self.dim];
        for (&(i, c), gj) in self.lift.iter().zip(&gp) {
            g[i] += c * gj;
        }
        (v, g)
    }
}

/// Best of several starts: `first` (if any) and pseudo-random points from a
/// seeded generator. Ties keep the earliest start.
pub fn maximize_multistart(obj: &mut dyn SimplexObjective, first: Option<&[f64]>, opts: &SolverOptions) -> Result<(Maximum, usize)> {
    let n = obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Maximum, usize)> = None;
    let mut last_err = None;
    for k in 0..opts.restarts.max(1) {
        let start: Vec<f64> = if k == 0 {
            first.map(|f| f.to_vec()).unwrap_or_else(|| vec![1.0 / n as f64; n])
        } else {
            let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        };
        match maximize_concave_simplex(obj, Some(&start), opts) {
            Ok(m) => {
                if best.as_ref().is_none_or(|(b, _)| m.value > b.value) {
                    best = Some((m, k));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Internal("no start succeeded".into())))
}

/// Maximum of a concave function on `[a, b]` by golden-section search.
pub fn maximize_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a, b);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let candidates = [(x, f(x)), (a, f(a)), (b, f(b))];
    candidates.into_iter().fold((x, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc })
}

/// Root of nondecreasing `g` with `g(lo) ≤ target ≤ g(hi)`, located to a
/// bracket narrower than `width`; returns the bracket midpoint.
pub fn bisect_root(mut g: impl FnMut(f64) -> Result<f64>, lo: f64, hi: f64, target: f64, width: f64) -> Result<f64> {
    let (g_lo, g_hi) = (g(lo)?, g(hi)?);
    if !(g_lo <= target && target <= g_hi) {
        return Err(Error::Bracket { lo, hi, g_lo, g_hi, target });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a >= width {
        let m = 0.5 * (a + b);
        if g(m)? < target {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Distribution on a support with its marginals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportDistribution {
    pub support: Vec<Annotation>,
    pub weights: Vec<f64>,
    pub symmetric: bool,
}

/// Statistics of a symmetric distribution used by the merging bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedDistributionStats {
    /// Total mass on matmul constituents.
    pub p0: f64,
    /// First marginal of `P`.
    pub p_m: BTreeMap<u32, f64>,
    /// First marginal of `P` restricted to non-matmul constituents.
    pub p_star_m: BTreeMap<u32, f64>,
    /// Derived distribution on group indices.
    pub p_tilde: BTreeMap<u32, f64>,
}

impl SupportDistribution {
    pub fn new(support: Vec<Annotation>, weights: Vec<f64>, symmetric: bool) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::Invalid("support and weights differ in length".into()));
        }
        let s: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("weights must be a probability vector (sum {s})")));
        }
        Ok(SupportDistribution { support, weights, symmetric })
    }

    pub fn marginals(&self) -> [BTreeMap<u32, f64>; 3] {
        marginals(&self.support, &self.weights)
    }

    /// `P0`, `P_m`, `P*_m`, `P̃` for a given set of matmul constituents.
    pub fn merged_stats(&self, suppz: &BTreeSet<Annotation>) -> Result<MergedDistributionStats> {
        let mut p0 = 0.0;
        let mut p_m: BTreeMap<u32, f64> = BTreeMap::new();
        let mut p_star_m: BTreeMap<u32, f64> = BTreeMap::new();
        for (s, &w) in self.support.iter().zip(&self.weights) {
            *p_m.entry(s[0]).or_default() += w;
            if suppz.contains(s) {
                p0 += w;
            } else {
                *p_star_m.entry(s[0]).or_default() += w;
            }
        }
        if p0 <= 0.0 {
            return Err(Error::Domain("no mass on matmul constituents".into()));
        }
        let mut p_tilde = BTreeMap::new();
        for (&i, &m) in &p_m {
            let u = if i == 0 { m - p0 / 3.0 } else { m - p_star_m.get(&i).copied().unwrap_or(0.0) };
            p_tilde.insert(i, 1.5 / p0 * u);
        }
        Ok(MergedDistributionStats { p0, p_m, p_star_m, p_tilde })
    }
}
