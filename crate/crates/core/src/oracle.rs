//! Exhaustive finite-power checks: the partition-restricted value at small
//! powers, zero-sequence enumeration, and the consistent-implies-coherent
//! property of merged zero-sequences.

use std::collections::BTreeSet;
use std::sync::Arc;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{partitioned_power, Annotation, EstimatedPartitionedTensor, PartitionedTensor};
use crate::tensor::{recognize_matmul, tensor_product, MatMulShape, Tensor};
use crate::values::{Mode, ValueContext};

pub use crate::partition::IndexTriple;

/// Enumeration budgets for the exhaustive searches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleLimits {
    /// Largest tensor power that is searched.
    pub max_n: u32,
    /// Largest support of the power tensor handed to the value search.
    pub max_support: u128,
    /// Largest number of zero-sequences enumerated.
    pub max_zero_sequences: u128,
    /// Largest merge set examined by the coherence check.
    pub max_set_size: usize,
    /// Largest number of candidate merge sets examined.
    pub max_sets: u128,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits { max_n: 2, max_support: 4096, max_zero_sequences: 4096, max_set_size: 4, max_sets: 50_000_000 }
    }
}

/// Result of the exhaustive value search: the best total value and the
/// zeroing that achieves it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VcwResult {
    pub n: u32,
    pub rho: f64,
    pub value: f64,
    /// Surviving x-, y- and z-index tuples, each sorted.
    pub a: Vec<Vec<u32>>,
    pub b: Vec<Vec<u32>>,
    pub c: Vec<Vec<u32>>,
    /// Support triples that survive the zeroing.
    pub survivors: Vec<IndexTriple>,
    /// Search nodes visited.
    pub nodes: u64,
}

/// True iff no two triples share an x-, y- or z-index tuple.
pub fn is_strongly_disjoint(triples: &[IndexTriple]) -> bool {
    let mut xs = BTreeSet::new();
    let mut ys = BTreeSet::new();
    let mut zs = BTreeSet::new();
    triples.iter().all(|t| xs.insert(&t.x) & ys.insert(&t.y) & zs.insert(&t.z))
}

/// Re-derives the survivors of the zeroing `(a, b, c)` from the full power
/// support and checks that they are strongly disjoint and match the reported
/// survivors. Independent of the search that produced the witness.
pub fn verify_witness(t: &EstimatedPartitionedTensor, w: &VcwResult) -> Result<bool> {
    let power = partitioned_power(t, w.n, u128::MAX)?;
    let (a, b, c): (BTreeSet<_>, BTreeSet<_>, BTreeSet<_>) =
        (w.a.iter().collect(), w.b.iter().collect(), w.c.iter().collect());
    let survivors: Vec<IndexTriple> = power
        .support()
        .filter(|s| a.contains(&s.x) && b.contains(&s.y) && c.contains(&s.z))
        .cloned()
        .collect();
    let reported: BTreeSet<&IndexTriple> = w.survivors.iter().collect();
    Ok(is_strongly_disjoint(&survivors) && survivors.iter().collect::<BTreeSet<_>>() == reported)
}

struct VcwSearch {
    triples: Vec<[usize; 3]>,
    values: Vec<f64>,
    used: [Vec<bool>; 3],
    chosen: Vec<usize>,
    best: Option<(f64, Vec<usize>, [Vec<usize>; 3])>,
    tuples: [Vec<Vec<u32>>; 3],
    nodes: u64,
}

const VALUE_TIE: f64 = 1e-12;

impl VcwSearch {
    /// Zeroing witness of the current selection as sorted index tuples, for
    /// the deterministic tie-break.
    fn witness(&self) -> [Vec<usize>; 3] {
        let mut w: [Vec<usize>; 3] = Default::default();
        for (l, wl) in w.iter_mut().enumerate() {
            let mut ids: Vec<usize> = self.chosen.iter().map(|&i| self.triples[i][l]).collect();
            ids.sort_by(|p, q| self.tuples[l][*p].cmp(&self.tuples[l][*q]));
            *wl = ids;
        }
        w
    }

    fn witness_key(&self, w: &[Vec<usize>; 3]) -> [Vec<Vec<u32>>; 3] {
        let f = |l: usize| w[l].iter().map(|&i| self.tuples[l][i].clone()).collect::<Vec<_>>();
        [f(0), f(1), f(2)]
    }

    fn record(&mut self, value: f64) {
        let w = self.witness();
        let better = match &self.best {
            None => true,
            Some((bv, _, bw)) => {
                let tol = VALUE_TIE * bv.abs().max(1.0);
                value > bv + tol || (value >= bv - tol && self.witness_key(&w) > self.witness_key(bw))
            }
        };
        if better {
            self.best = Some((value, self.chosen.clone(), w));
        }
    }

    /// Optimistic completion: every unused x-index collects the largest value
    /// of a later triple that avoids all used indices.
    fn optimistic(&self, from: usize) -> f64 {
        let mut per_x = vec![0.0f64; self.used[0].len()];
        for i in from..self.triples.len() {
            let t = self.triples[i];
            if !self.used[0][t[0]] && !self.used[1][t[1]] && !self.used[2][t[2]] {
                per_x[t[0]] = per_x[t[0]].max(self.values[i]);
            }
        }
        per_x.iter().sum()
    }

    /// A triple that is not selected must not survive the zeroing.
    fn closed_after(&self, i: usize) -> bool {
        self.triples.iter().enumerate().all(|(j, t)| {
            j == i
                || self.chosen.contains(&j)
                || !((self.used[0][t[0]] || t[0] == self.triples[i][0])
                    && (self.used[1][t[1]] || t[1] == self.triples[i][1])
                    && (self.used[2][t[2]] || t[2] == self.triples[i][2]))
        })
    }

    fn run(&mut self, from: usize, value: f64) {
        self.nodes += 1;
        self.record(value);
        for i in from..self.triples.len() {
            let t = self.triples[i];
            if self.used[0][t[0]] || self.used[1][t[1]] || self.used[2][t[2]] {
                continue;
            }
            if let Some((bv, _, _)) = &self.best {
                let bound = value + self.optimistic(i);
                if bound < bv - VALUE_TIE * bv.abs().max(1.0) {
                    return;
                }
            }
            if !self.closed_after(i) {
                continue;
            }
            for l in 0..3 {
                self.used[l][t[l]] = true;
            }
            self.chosen.push(i);
            self.run(i + 1, value + self.values[i]);
            self.chosen.pop();
            for l in 0..3 {
                self.used[l][t[l]] = false;
            }
        }
    }
}

/// Exact maximum over zeroings of x-, y- and z-index tuples of the `N`-th
/// power of the total value of the surviving support, subject to the
/// survivors being strongly disjoint.
///
/// Ties in value are broken toward the lexicographically greatest witness
/// `(A, B, C)`.
pub fn brute_vcw(
    ctx: &ValueContext,
    t: &EstimatedPartitionedTensor,
    rho: f64,
    n: u32,
    limits: &OracleLimits,
) -> Result<VcwResult> {
    if !t.is_symmetric() {
        return Err(Error::ClassViolation("exhaustive value search requires a symmetric tensor".into()));
    }
    if n == 0 || n > limits.max_n {
        return Err(Error::ResourceLimit { what: format!("tensor power N = {n}"), needed: n as u128, limit: limits.max_n as u128 });
    }
    let power = partitioned_power(t, n, limits.max_support)?;
    let mut tuples: [Vec<Vec<u32>>; 3] = Default::default();
    for s in power.support() {
        tuples[0].push(s.x.clone());
        tuples[1].push(s.y.clone());
        tuples[2].push(s.z.clone());
    }
    for l in tuples.iter_mut() {
        l.sort();
        l.dedup();
    }
    let id = |l: usize, v: &Vec<u32>, tuples: &[Vec<Vec<u32>>; 3]| tuples[l].binary_search(v).expect("tuple listed");
    let mut entries: Vec<([usize; 3], f64, IndexTriple)> = Vec::new();
    for (s, c) in &power.constituents {
        let v = ctx.log2_value(&c.value, rho, Mode::Upper)?.exp2();
        entries.push(([id(0, &s.x, &tuples), id(1, &s.y, &tuples), id(2, &s.z, &tuples)], v, s.clone()));
    }
    // Heavy triples first tightens the bound early.
    entries.sort_by(|p, q| q.1.total_cmp(&p.1).then_with(|| p.2.cmp(&q.2)));
    let mut search = VcwSearch {
        triples: entries.iter().map(|e| e.0).collect(),
        values: entries.iter().map(|e| e.1).collect(),
        used: [vec![false; tuples[0].len()], vec![false; tuples[1].len()], vec![false; tuples[2].len()]],
        chosen: Vec::new(),
        best: None,
        tuples,
        nodes: 0,
    };
    search.run(0, 0.0);
    let (value, chosen, w) = search.best.clone().ok_or_else(|| Error::Internal("empty search".into()))?;
    let [a, b, c] = search.witness_key(&w);
    let mut survivors: Vec<IndexTriple> = chosen.iter().map(|&i| entries[i].2.clone()).collect();
    survivors.sort();
    Ok(VcwResult { n, rho, value, a, b, c, survivors, nodes: search.nodes })
}

/// Support triples of the `N`-th power whose every coordinate annotation
/// contains a zero.
pub fn enumerate_zero_sequences(t: &EstimatedPartitionedTensor, n: u32, limits: &OracleLimits) -> Result<Vec<IndexTriple>> {
    if n == 0 {
        return Err(Error::Invalid("power must be positive".into()));
    }
    let (zero, _) = t.split_support();
    let zero: Vec<Annotation> = zero.into_iter().collect();
    let needed = (zero.len() as u128).checked_pow(n).unwrap_or(u128::MAX);
    if needed > limits.max_zero_sequences {
        return Err(Error::ResourceLimit { what: format!("zero-sequences at N = {n}"), needed, limit: limits.max_zero_sequences });
    }
    let mut out = Vec::with_capacity(needed as usize);
    let mut idx = vec![0usize; n as usize];
    'outer: loop {
        let parts: Vec<Annotation> = idx.iter().map(|&i| zero[i]).collect();
        out.push(IndexTriple::from_annotations(&parts));
        for pos in (0..idx.len()).rev() {
            idx[pos] += 1;
            if idx[pos] < zero.len() {
                continue 'outer;
            }
            idx[pos] = 0;
        }
        break;
    }
    out.sort();
    Ok(out)
}

/// Explicit constituent of the power tensor at `s`: the tensor product of the
/// per-coordinate constituents of `base`.
fn power_constituent(base: &PartitionedTensor, s: &IndexTriple) -> Tensor<BigInt> {
    let mut coords = s.coordinates().into_iter();
    let first = base.constituent(coords.next().expect("nonempty index triple"));
    coords.fold(first, |acc, a| tensor_product(&acc, &base.constituent(a)))
}

/// Shape of the matrix multiplication tensor equal to the literal sum of the
/// given distinct power constituents, if the sum is one.
pub fn is_consistent(members: &[IndexTriple], base: &PartitionedTensor) -> Option<MatMulShape> {
    let mut sum = Tensor::<BigInt>::new();
    for s in members {
        let c = power_constituent(base, s);
        if c.is_empty() {
            return None;
        }
        sum = sum.sum(&c);
    }
    if sum.is_empty() {
        return None;
    }
    recognize_matmul(&sum).map(|w| w.shape)
}

/// True iff every coordinate is uniformly x-zero, uniformly y-zero or
/// uniformly z-zero across the members.
pub fn is_coherent(members: &[IndexTriple]) -> bool {
    let Some(first) = members.first() else {
        return true;
    };
    (0..first.len()).all(|t| {
        members.iter().all(|s| s.x[t] == 0) || members.iter().all(|s| s.y[t] == 0) || members.iter().all(|s| s.z[t] == 0)
    })
}

/// Outcome of scanning merge sets of zero-sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub label: String,
    pub n: u32,
    pub max_set_size: usize,
    pub zero_sequences: usize,
    pub sets_checked: u128,
    /// Consistent sets, including singletons.
    pub consistent_sets: u128,
    /// Consistent sets with at least two members.
    pub nontrivial_consistent_sets: u128,
    /// Consistent sets that are not coherent.
    pub violations: Vec<Vec<IndexTriple>>,
    /// First nontrivial consistent set found, with its shape.
    pub example: Option<(Vec<IndexTriple>, MatMulShape)>,
}

impl CoherenceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn choose(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn scan_merge_sets(
    t: &EstimatedPartitionedTensor,
    n: u32,
    max_set_size: usize,
    limits: &OracleLimits,
    stop_at_first_violation: bool,
) -> Result<CoherenceReport> {
    if n == 0 || n > limits.max_n {
        return Err(Error::ResourceLimit { what: format!("tensor power N = {n}"), needed: n as u128, limit: limits.max_n as u128 });
    }
    if max_set_size > limits.max_set_size {
        return Err(Error::ResourceLimit {
            what: "merge set size".into(),
            needed: max_set_size as u128,
            limit: limits.max_set_size as u128,
        });
    }
    let base: Arc<PartitionedTensor> = t
        .explicit()
        .cloned()
        .ok_or_else(|| Error::Invalid("the coherence check needs an explicit base tensor".into()))?;
    let zs = enumerate_zero_sequences(t, n, limits)?;
    let m = zs.len() as u128;
    let needed: u128 = (1..=max_set_size as u128).map(|k| choose(m, k)).fold(0u128, u128::saturating_add);
    if needed > limits.max_sets {
        return Err(Error::ResourceLimit { what: "merge sets".into(), needed, limit: limits.max_sets });
    }
    let explicit: Vec<Tensor<BigInt>> = zs.iter().map(|s| power_constituent(&base, s)).collect();
    let mut report = CoherenceReport {
        label: t.label().to_string(),
        n,
        max_set_size,
        zero_sequences: zs.len(),
        sets_checked: 0,
        consistent_sets: 0,
        nontrivial_consistent_sets: 0,
        violations: Vec::new(),
        example: None,
    };
    let mut stack: Vec<usize> = Vec::new();
    fn rec(
        from: usize,
        stack: &mut Vec<usize>,
        sum: &Tensor<BigInt>,
        zs: &[IndexTriple],
        explicit: &[Tensor<BigInt>],
        max_set_size: usize,
        stop: bool,
        report: &mut CoherenceReport,
    ) {
        for i in from..zs.len() {
            if stop && !report.violations.is_empty() {
                return;
            }
            if explicit[i].is_empty() {
                continue;
            }
            stack.push(i);
            let next = sum.sum(&explicit[i]);
            report.sets_checked += 1;
            if let Some(w) = recognize_matmul(&next) {
                let members: Vec<IndexTriple> = stack.iter().map(|&j| zs[j].clone()).collect();
                report.consistent_sets += 1;
                if members.len() >= 2 {
                    report.nontrivial_consistent_sets += 1;
                    if report.example.is_none() {
                        report.example = Some((members.clone(), w.shape));
                    }
                }
                if !is_coherent(&members) {
                    report.violations.push(members);
                }
            }
            if stack.len() < max_set_size {
                rec(i + 1, stack, &next, zs, explicit, max_set_size, stop, report);
            }
            stack.pop();
        }
    }
    rec(0, &mut stack, &Tensor::new(), &zs, &explicit, max_set_size, stop_at_first_violation, &mut report);
    Ok(report)
}

/// Checks on every merge set of at most `max_set_size` zero-sequences of the
/// `N`-th power that consistency implies coherence. Requires a CW-like
/// tensor, for which a violation indicates a defect in this implementation.
pub fn validate_coherence_lemma(
    t: &EstimatedPartitionedTensor,
    n: u32,
    max_set_size: usize,
    limits: &OracleLimits,
) -> Result<CoherenceReport> {
    let cw = t.is_cw_like();
    if !cw.cw_like {
        return Err(Error::ClassViolation(format!("{} is not CW-like: {}", t.label(), cw.detail)));
    }
    scan_merge_sets(t, n, max_set_size, limits, false)
}

/// Searches any tensor with an explicit base for a consistent but incoherent
/// merge set, stopping at the first one.
pub fn find_incoherent_consistent_set(
    t: &EstimatedPartitionedTensor,
    n: u32,
    max_set_size: usize,
    limits: &OracleLimits,
) -> Result<Option<Vec<IndexTriple>>> {
    Ok(scan_merge_sets(t, n, max_set_size, limits, true)?.violations.into_iter().next())
}
