//! Partitioned and estimated partitioned tensors.
//!
//! Two representations coexist:
//!
//! * [`PartitionedTensor`] holds an explicit [`Tensor`] with a group index for
//!   every variable. It is exact and is used for small parameters, for the
//!   combinatorial oracles and to cross-check the symbolic construction.
//! * [`EstimatedPartitionedTensor`] keeps only group sizes, the support, the
//!   matrix-multiplication shape of each constituent (if any) and its value
//!   expression. The canonical squaring runs on this representation, so the
//!   size of the work depends on the support and not on the number of
//!   variables.
//!
//! Group indices are integers throughout; every tensor analyzed here is tight.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::identity::cw_tensor;
use crate::tensor::{are_equivalent, recognize_matmul, rotate, tensor_product, MatMulShape, Tensor, Var};

/// Group index triple `(i, j, k)` of a constituent.
pub type Annotation = [u32; 3];

/// Default cap on the number of support triples materialized by
/// [`partitioned_power`].
pub const DEFAULT_SUPPORT_CAP: u128 = 1_000_000;

/// Explicit squares are built only when the product has at most this many
/// entries.
pub const DEFAULT_EXPLICIT_ENTRY_CAP: usize = 25_000;

/// Rotates an annotation `r` times: `(i,j,k) -> (j,k,i)` per step.
pub fn rotate_annotation(a: Annotation, r: usize) -> Annotation {
    [a[r % 3], a[(r + 1) % 3], a[(r + 2) % 3]]
}

fn rotate_shape(s: MatMulShape, r: usize) -> MatMulShape {
    (0..r % 3).fold(s, |s, _| s.rotate())
}

fn contains_zero(a: &Annotation) -> bool {
    a.contains(&0)
}

/// Common sum of all annotations, if any.
pub fn tightness_of<'a>(support: impl IntoIterator<Item = &'a Annotation>) -> Option<u32> {
    let mut d = None;
    for a in support {
        let s = a[0] + a[1] + a[2];
        match d {
            None => d = Some(s),
            Some(e) if e != s => return None,
            _ => {}
        }
    }
    d
}

/// Index triple of a constituent of a tensor power: one group-index tuple per
/// variable set.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndexTriple {
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub z: Vec<u32>,
}

impl IndexTriple {
    pub fn from_annotations(parts: &[Annotation]) -> Self {
        IndexTriple {
            x: parts.iter().map(|a| a[0]).collect(),
            y: parts.iter().map(|a| a[1]).collect(),
            z: parts.iter().map(|a| a[2]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Per-coordinate annotations.
    pub fn coordinates(&self) -> Vec<Annotation> {
        (0..self.len()).map(|t| [self.x[t], self.y[t], self.z[t]]).collect()
    }

    /// Compact form such as `(00,11,11)`; tuple entries are separated by `.`
    /// when any index exceeds 9.
    pub fn compact(&self) -> String {
        let wide = self.x.iter().chain(&self.y).chain(&self.z).any(|&i| i > 9);
        let f = |v: &[u32]| {
            let parts: Vec<String> = v.iter().map(|i| i.to_string()).collect();
            parts.join(if wide { "." } else { "" })
        };
        format!("({},{},{})", f(&self.x), f(&self.y), f(&self.z))
    }

    /// Parses the compact form produced by [`IndexTriple::compact`].
    pub fn parse(s: &str) -> Result<Self> {
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::Invalid(format!("index triple must be parenthesized: {s}")))?;
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Invalid(format!("index triple needs three components: {s}")));
        }
        let parse_tuple = |p: &str| -> Result<Vec<u32>> {
            let p = p.trim();
            if p.contains('.') {
                p.split('.').map(|d| d.parse::<u32>().map_err(|e| Error::Invalid(format!("{s}: {e}")))).collect()
            } else {
                p.chars()
                    .map(|c| c.to_digit(10).ok_or_else(|| Error::Invalid(format!("{s}: bad digit {c}"))))
                    .collect()
            }
        };
        let t = IndexTriple { x: parse_tuple(parts[0])?, y: parse_tuple(parts[1])?, z: parse_tuple(parts[2])? };
        if t.x.len() != t.y.len() || t.y.len() != t.z.len() || t.x.is_empty() {
            return Err(Error::Invalid(format!("index triple components must have equal positive length: {s}")));
        }
        Ok(t)
    }
}

impl fmt::Display for IndexTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.compact())
    }
}

/// Explicit tensor with a group index for every variable.
#[derive(Clone, Debug)]
pub struct PartitionedTensor {
    tensor: Tensor<BigInt>,
    groups: [BTreeMap<Var, u32>; 3],
    support: BTreeSet<Annotation>,
}

impl PartitionedTensor {
    /// Validates the grouping and computes the support.
    pub fn new(tensor: Tensor<BigInt>, groups: [BTreeMap<Var, u32>; 3]) -> Result<Self> {
        let sets = [tensor.x_vars(), tensor.y_vars(), tensor.z_vars()];
        for l in 0..3 {
            if sets[l].len() != groups[l].len() || sets[l].iter().any(|v| !groups[l].contains_key(v)) {
                return Err(Error::Invalid(format!("group map {l} does not cover its variable set exactly")));
            }
        }
        let support = tensor
            .entries()
            .keys()
            .map(|(x, y, z)| [groups[0][x], groups[1][y], groups[2][z]])
            .collect();
        Ok(PartitionedTensor { tensor, groups, support })
    }

    pub fn tensor(&self) -> &Tensor<BigInt> {
        &self.tensor
    }

    pub fn groups(&self) -> &[BTreeMap<Var, u32>; 3] {
        &self.groups
    }

    pub fn support(&self) -> &BTreeSet<Annotation> {
        &self.support
    }

    pub fn tightness(&self) -> Option<u32> {
        tightness_of(&self.support)
    }

    /// Number of variables per group index, for each of the three sets.
    pub fn group_sizes(&self) -> [Vec<u128>; 3] {
        let mut out: [Vec<u128>; 3] = Default::default();
        for l in 0..3 {
            for &g in self.groups[l].values() {
                let g = g as usize;
                if out[l].len() <= g {
                    out[l].resize(g + 1, 0);
                }
                out[l][g] += 1;
            }
        }
        out
    }

    /// Restriction of the tensor to one group triple.
    pub fn constituent(&self, a: Annotation) -> Tensor<BigInt> {
        let g = &self.groups;
        self.tensor.restrict(|x| g[0][x] == a[0], |y| g[1][y] == a[1], |z| g[2][z] == a[2])
    }

    /// Rotation: groups follow their variables.
    pub fn rotated(&self) -> PartitionedTensor {
        let [gx, gy, gz] = self.groups.clone();
        PartitionedTensor::new(rotate(&self.tensor), [gy, gz, gx]).expect("rotation preserves grouping")
    }

    /// Support closed under rotation and every `T_(j,k,i)` equivalent to the
    /// rotation of `T_(i,j,k)`.
    pub fn is_symmetric(&self) -> bool {
        let sizes = self.group_sizes();
        if sizes[0] != sizes[1] || sizes[1] != sizes[2] {
            return false;
        }
        for &a in &self.support {
            let b = rotate_annotation(a, 1);
            if !self.support.contains(&b) {
                return false;
            }
            if !are_equivalent(&rotate(&self.constituent(a)), &self.constituent(b)) {
                return false;
            }
        }
        true
    }

    /// Splits the support by whether the constituent is a matrix
    /// multiplication tensor.
    pub fn split_support(&self) -> (BTreeSet<Annotation>, BTreeSet<Annotation>) {
        self.support.iter().partition(|a| recognize_matmul(&self.constituent(**a)).is_some())
    }

    pub fn class_t_membership(&self) -> bool {
        let (z, _) = self.split_support();
        z == self.support.iter().filter(|a| contains_zero(a)).cloned().collect()
    }

    /// Checks the four structural clauses of CW-likeness on the explicit
    /// tensor.
    pub fn is_cw_like(&self) -> CwLikeReport {
        let sizes = self.group_sizes();
        if let Some(r) = clause_one(&sizes) {
            return r;
        }
        for &a in &self.support {
            if !contains_zero(&a) && recognize_matmul(&self.constituent(a)).is_some() {
                return CwLikeReport::violated(2, format!("constituent {a:?} has no zero index but is a matrix multiplication tensor"));
            }
        }
        for &a in &self.support {
            let zeros: Vec<usize> = (0..3).filter(|&l| a[l] == 0).collect();
            for &zl in &zeros {
                if let Err(msg) = self.check_identity_slice(a, zl) {
                    return CwLikeReport::violated(3, msg);
                }
            }
        }
        if let Some(r) = clause_four(&self.support, &sizes) {
            return r;
        }
        CwLikeReport::ok()
    }

    /// `T_a = Σ_i u_i v_i w` where `w` is the single variable of the zero
    /// group at position `zl` and `u, v` enumerate the other two groups.
    fn check_identity_slice(&self, a: Annotation, zl: usize) -> std::result::Result<(), String> {
        let (l1, l2) = ((zl + 1) % 3, (zl + 2) % 3);
        let zero_group: Vec<&Var> = self.groups[zl].iter().filter(|(_, &g)| g == 0).map(|(v, _)| v).collect();
        if zero_group.len() != 1 {
            return Err(format!("zero group of set {zl} is not a singleton"));
        }
        let g1: BTreeSet<&Var> = self.groups[l1].iter().filter(|(_, &g)| g == a[l1]).map(|(v, _)| v).collect();
        let g2: BTreeSet<&Var> = self.groups[l2].iter().filter(|(_, &g)| g == a[l2]).map(|(v, _)| v).collect();
        if g1.len() != g2.len() {
            return Err(format!("constituent {a:?}: paired groups have sizes {} and {}", g1.len(), g2.len()));
        }
        let t = self.constituent(a);
        let mut left: BTreeMap<&Var, usize> = BTreeMap::new();
        let mut right: BTreeMap<&Var, usize> = BTreeMap::new();
        for ((x, y, z), c) in t.entries() {
            if *c != BigInt::from(1) {
                return Err(format!("constituent {a:?} has coefficient {c}"));
            }
            let v = [x, y, z];
            *left.entry(v[l1]).or_default() += 1;
            *right.entry(v[l2]).or_default() += 1;
        }
        let perfect = |m: &BTreeMap<&Var, usize>, g: &BTreeSet<&Var>| m.len() == g.len() && m.values().all(|&c| c == 1);
        if !perfect(&left, &g1) || !perfect(&right, &g2) {
            return Err(format!("constituent {a:?} is not a perfect matching between its nonzero groups"));
        }
        Ok(())
    }
}

fn clause_one(sizes: &[Vec<u128>; 3]) -> Option<CwLikeReport> {
    for (l, s) in sizes.iter().enumerate() {
        let d = s.len().saturating_sub(1);
        if d == 0 || s[0] != 1 || s[d] != 1 {
            return Some(CwLikeReport::violated(1, format!("set {l}: end groups must be singletons (sizes {s:?})")));
        }
        if let Some(i) = (1..d).find(|&i| s[i] <= 1) {
            return Some(CwLikeReport::violated(1, format!("set {l}: interior group {i} has size {}", s[i])));
        }
    }
    None
}

fn clause_four(support: &BTreeSet<Annotation>, sizes: &[Vec<u128>; 3]) -> Option<CwLikeReport> {
    let d = sizes[0].len() as u32 - 1;
    for a in support {
        if a.iter().all(|&i| i == 0 || i == d) && a.iter().filter(|&&i| i == d).count() != 1 {
            return Some(CwLikeReport::violated(4, format!("annotation {a:?} uses only 0 and {d}")));
        }
    }
    None
}

/// Result of a CW-likeness check: the first violated clause, if any.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CwLikeReport {
    pub cw_like: bool,
    pub violated_clause: Option<u8>,
    pub detail: String,
}

impl CwLikeReport {
    fn ok() -> Self {
        CwLikeReport { cw_like: true, violated_clause: None, detail: "all clauses hold".into() }
    }

    fn violated(clause: u8, detail: String) -> Self {
        CwLikeReport { cw_like: false, violated_clause: Some(clause), detail }
    }
}

/// Closed-form constituent values.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClosedForm {
    /// Laser value of the four-term constituent `(1,1,2)` of the canonical
    /// square of `tcw(q)`: `4^{1/3} q^{ρ/3} (2 + q^ρ)^{1/3}`.
    CwSquareOffDiagonal { q: u32 },
}

impl ClosedForm {
    pub fn log2_value(&self, rho: f64) -> f64 {
        match *self {
            ClosedForm::CwSquareOffDiagonal { q } => {
                let lq = (q as f64).log2();
                2.0 / 3.0 + rho * lq / 3.0 + (2.0 + (q as f64).powf(rho)).log2() / 3.0
            }
        }
    }
}

/// Value of a constituent as a function of ρ.
#[derive(Clone, Debug)]
pub enum ValueExpr {
    /// `volume^{ρ/3}`.
    VolumePower(u128),
    ClosedForm(ClosedForm),
    /// Laser value of an induced sub-tensor, resolved by the values module.
    Nested(Arc<EstimatedPartitionedTensor>),
    /// Product of the factors' values.
    Product(Vec<ValueExpr>),
}

impl ValueExpr {
    /// Product with flattening; volume powers are multiplied out.
    pub fn product(factors: Vec<ValueExpr>) -> ValueExpr {
        let mut vol: u128 = 1;
        let mut rest = Vec::new();
        let mut stack = factors;
        while let Some(f) = stack.pop() {
            match f {
                ValueExpr::VolumePower(v) => vol = vol.checked_mul(v).expect("volume overflow"),
                ValueExpr::Product(inner) => stack.extend(inner),
                other => rest.push(other),
            }
        }
        if rest.is_empty() {
            return ValueExpr::VolumePower(vol);
        }
        if vol != 1 {
            rest.push(ValueExpr::VolumePower(vol));
        }
        if rest.len() == 1 {
            return rest.pop().unwrap();
        }
        rest.sort_by_key(|e| e.canonical());
        ValueExpr::Product(rest)
    }

    /// Structural identifier; equal for expressions that evaluate equally by
    /// construction.
    pub fn canonical(&self) -> String {
        match self {
            ValueExpr::VolumePower(v) => format!("V{v}"),
            ValueExpr::ClosedForm(ClosedForm::CwSquareOffDiagonal { q }) => format!("C{q}"),
            ValueExpr::Nested(t) => format!("N{}", t.fingerprint()),
            ValueExpr::Product(f) => {
                let mut parts: Vec<String> = f.iter().map(|e| e.canonical()).collect();
                parts.sort();
                format!("P[{}]", parts.join(","))
            }
        }
    }

    /// Nested sub-tensors referenced directly or through products.
    pub fn nested(&self) -> Vec<&Arc<EstimatedPartitionedTensor>> {
        match self {
            ValueExpr::Nested(t) => vec![t],
            ValueExpr::Product(f) => f.iter().flat_map(|e| e.nested()).collect(),
            _ => vec![],
        }
    }

    /// Evaluation when no nested sub-tensor is involved.
    pub fn log2_simple(&self, rho: f64) -> Option<f64> {
        match self {
            ValueExpr::VolumePower(v) => Some(rho / 3.0 * (*v as f64).log2()),
            ValueExpr::ClosedForm(c) => Some(c.log2_value(rho)),
            ValueExpr::Nested(_) => None,
            ValueExpr::Product(f) => f.iter().map(|e| e.log2_simple(rho)).sum(),
        }
    }
}

/// One constituent of an estimated partitioned tensor.
#[derive(Clone, Debug)]
pub struct Constituent {
    /// Matrix multiplication shape when the constituent is one.
    pub shape: Option<MatMulShape>,
    pub value: ValueExpr,
}

/// Group sizes, support, constituent shapes and values.
#[derive(Clone, Debug)]
pub struct EstimatedPartitionedTensor {
    group_sizes: [Vec<u128>; 3],
    constituents: BTreeMap<Annotation, Constituent>,
    border_rank_bound: Option<u128>,
    symmetric: bool,
    explicit: Option<Arc<PartitionedTensor>>,
    fingerprint: String,
    label: String,
}

impl EstimatedPartitionedTensor {
    pub fn new(
        group_sizes: [Vec<u128>; 3],
        constituents: BTreeMap<Annotation, Constituent>,
        border_rank_bound: Option<u128>,
        symmetric: bool,
        label: impl Into<String>,
    ) -> Result<Self> {
        if constituents.is_empty() {
            return Err(Error::Invalid("an estimated partitioned tensor needs a nonempty support".into()));
        }
        for a in constituents.keys() {
            for l in 0..3 {
                if a[l] as usize >= group_sizes[l].len() || group_sizes[l][a[l] as usize] == 0 {
                    return Err(Error::Invalid(format!("annotation {a:?} refers to an empty group")));
                }
            }
        }
        for (a, c) in &constituents {
            if let Some(s) = c.shape {
                match c.value {
                    ValueExpr::VolumePower(v) if v == s.volume() => {}
                    _ => return Err(Error::Invalid(format!("matmul constituent {a:?} must carry volume^(rho/3)"))),
                }
            }
        }
        let fingerprint = compute_fingerprint(&group_sizes, &constituents, symmetric);
        Ok(EstimatedPartitionedTensor {
            group_sizes,
            constituents,
            border_rank_bound,
            symmetric,
            explicit: None,
            fingerprint,
            label: label.into(),
        })
    }

    /// Attaches an explicit tensor after checking that supports, group sizes
    /// and matmul classification agree.
    pub fn with_explicit(mut self, pt: Arc<PartitionedTensor>) -> Result<Self> {
        if pt.support() != &self.support() {
            return Err(Error::Internal("explicit and symbolic supports differ".into()));
        }
        let sizes = pt.group_sizes();
        for l in 0..3 {
            let n = sizes[l].len().max(self.group_sizes[l].len());
            let pad = |v: &Vec<u128>| (0..n).map(|i| v.get(i).copied().unwrap_or(0)).collect::<Vec<_>>();
            if pad(&sizes[l]) != pad(&self.group_sizes[l]) {
                return Err(Error::Internal(format!("explicit and symbolic group sizes differ in set {l}")));
            }
        }
        for (a, c) in &self.constituents {
            let found = recognize_matmul(&pt.constituent(*a)).map(|w| w.shape);
            let agree = match (found, c.shape) {
                (None, None) => true,
                // Variable counts determine the shape uniquely.
                (Some(f), Some(s)) => f == s,
                _ => false,
            };
            if !agree {
                return Err(Error::Internal(format!(
                    "constituent {a:?}: explicit recognition {found:?} disagrees with symbolic shape {:?}",
                    c.shape
                )));
            }
        }
        self.explicit = Some(pt);
        Ok(self)
    }

    pub fn group_sizes(&self) -> &[Vec<u128>; 3] {
        &self.group_sizes
    }

    pub fn constituents(&self) -> &BTreeMap<Annotation, Constituent> {
        &self.constituents
    }

    pub fn constituent(&self, a: &Annotation) -> Option<&Constituent> {
        self.constituents.get(a)
    }

    pub fn support(&self) -> BTreeSet<Annotation> {
        self.constituents.keys().cloned().collect()
    }

    pub fn border_rank_bound(&self) -> Option<u128> {
        self.border_rank_bound
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn explicit(&self) -> Option<&Arc<PartitionedTensor>> {
        self.explicit.as_ref()
    }

    /// SHA-256 over a canonical serialization, minimized over rotations.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn tightness(&self) -> Option<u32> {
        tightness_of(self.constituents.keys())
    }

    /// Symbolic symmetry check: equal group sizes, rotation-closed support,
    /// rotated shapes and identical value expressions along each orbit.
    pub fn is_symmetric(&self) -> bool {
        if self.group_sizes[0] != self.group_sizes[1] || self.group_sizes[1] != self.group_sizes[2] {
            return false;
        }
        self.constituents.iter().all(|(a, c)| match self.constituents.get(&rotate_annotation(*a, 1)) {
            None => false,
            Some(d) => d.shape == c.shape.map(|s| s.rotate()) && d.value.canonical() == c.value.canonical(),
        })
    }

    /// Rotation orbits of the support, each sorted, listed by least member.
    pub fn orbits(&self) -> Vec<Vec<Annotation>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &a in self.constituents.keys() {
            if seen.contains(&a) {
                continue;
            }
            let mut orbit: Vec<Annotation> = (0..3).map(|r| rotate_annotation(a, r)).collect();
            orbit.sort();
            orbit.dedup();
            seen.extend(orbit.iter().cloned());
            out.push(orbit);
        }
        out
    }

    /// `(suppz, suppn)`: matmul and non-matmul constituents.
    pub fn split_support(&self) -> (BTreeSet<Annotation>, BTreeSet<Annotation>) {
        self.constituents.keys().copied().partition(|a| self.constituents[a].shape.is_some())
    }

    /// `suppz` equals exactly the support triples with a zero coordinate.
    pub fn class_t_membership(&self) -> bool {
        let (z, _) = self.split_support();
        z == self.constituents.keys().filter(|a| contains_zero(a)).cloned().collect()
    }

    /// CW-likeness from shapes and group sizes. Clause 3 is read off the
    /// recorded shapes (a perfect matching through a singleton); when an
    /// explicit tensor is attached the literal check is used instead.
    pub fn is_cw_like(&self) -> CwLikeReport {
        if let Some(pt) = &self.explicit {
            return pt.is_cw_like();
        }
        if let Some(r) = clause_one(&self.group_sizes) {
            return r;
        }
        for (a, c) in &self.constituents {
            if !contains_zero(a) && c.shape.is_some() {
                return CwLikeReport::violated(2, format!("constituent {a:?} has no zero index but is a matrix multiplication tensor"));
            }
        }
        for (a, c) in &self.constituents {
            for zl in (0..3).filter(|&l| a[l] == 0) {
                let (l1, l2) = ((zl + 1) % 3, (zl + 2) % 3);
                let m1 = self.group_sizes[l1][a[l1] as usize];
                let m2 = self.group_sizes[l2][a[l2] as usize];
                let expected = match zl {
                    0 => MatMulShape { n: 1, m: 1, p: m1 as u64 },
                    1 => MatMulShape { n: m2 as u64, m: 1, p: 1 },
                    _ => MatMulShape { n: 1, m: m1 as u64, p: 1 },
                };
                if m1 != m2 || c.shape != Some(expected) {
                    return CwLikeReport::violated(3, format!("constituent {a:?} is not an identity slice (shape {:?}, groups {m1}, {m2})", c.shape));
                }
            }
        }
        if let Some(r) = clause_four(&self.support(), &self.group_sizes) {
            return r;
        }
        CwLikeReport::ok()
    }

    /// Self-describing JSON document; nested sub-tensors are listed once,
    /// keyed by fingerprint.
    pub fn to_document(&self) -> serde_json::Value {
        let mut nested = BTreeMap::new();
        collect_nested(self, &mut nested);
        serde_json::json!({
            "format": "lasermm.ept/1",
            "root": tensor_doc(self),
            "nested": nested,
        })
    }

    /// Inverse of [`EstimatedPartitionedTensor::to_document`]; the explicit
    /// tensor is not serialized.
    pub fn from_document(doc: &serde_json::Value) -> Result<Self> {
        let nested_docs = doc
            .get("nested")
            .and_then(|n| n.as_object())
            .ok_or_else(|| Error::Invalid("document lacks a nested table".into()))?;
        let mut built: BTreeMap<String, Arc<EstimatedPartitionedTensor>> = BTreeMap::new();
        let root: TensorDoc = serde_json::from_value(doc.get("root").cloned().unwrap_or_default())?;
        let mut docs: BTreeMap<String, TensorDoc> = BTreeMap::new();
        for (k, v) in nested_docs {
            docs.insert(k.clone(), serde_json::from_value(v.clone())?);
        }
        let t = build_from_doc(&root, &docs, &mut built)?;
        if t.fingerprint != root.fingerprint {
            return Err(Error::Invalid("fingerprint mismatch after deserialization".into()));
        }
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
struct ConstituentDoc {
    annotation: Annotation,
    shape: Option<MatMulShape>,
    value: ValueDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ValueDoc {
    VolumePower(String),
    ClosedForm(ClosedForm),
    Nested(String),
    Product(Vec<ValueDoc>),
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    label: String,
    fingerprint: String,
    symmetric: bool,
    border_rank_bound: Option<String>,
    group_sizes: [Vec<String>; 3],
    constituents: Vec<ConstituentDoc>,
}

fn value_doc(v: &ValueExpr) -> ValueDoc {
    match v {
        ValueExpr::VolumePower(n) => ValueDoc::VolumePower(n.to_string()),
        ValueExpr::ClosedForm(c) => ValueDoc::ClosedForm(c.clone()),
        ValueExpr::Nested(t) => ValueDoc::Nested(t.fingerprint().to_string()),
        ValueExpr::Product(f) => ValueDoc::Product(f.iter().map(value_doc).collect()),
    }
}

fn tensor_doc(t: &EstimatedPartitionedTensor) -> serde_json::Value {
    let d = TensorDoc {
        label: t.label.clone(),
        fingerprint: t.fingerprint.clone(),
        symmetric: t.symmetric,
        border_rank_bound: t.border_rank_bound.map(|b| b.to_string()),
        group_sizes: t.group_sizes.clone().map(|v| v.iter().map(|n| n.to_string()).collect()),
        constituents: t
            .constituents
            .iter()
            .map(|(a, c)| ConstituentDoc { annotation: *a, shape: c.shape, value: value_doc(&c.value) })
            .collect(),
    };
    serde_json::to_value(d).expect("document serialization")
}

fn collect_nested(t: &EstimatedPartitionedTensor, out: &mut BTreeMap<String, serde_json::Value>) {
    for c in t.constituents.values() {
        for n in c.value.nested() {
            if !out.contains_key(n.fingerprint()) {
                out.insert(n.fingerprint().to_string(), tensor_doc(n));
                collect_nested(n, out);
            }
        }
    }
}

fn parse_u128(s: &str) -> Result<u128> {
    s.parse().map_err(|e| Error::Invalid(format!("bad integer {s}: {e}")))
}

fn build_from_doc(
    d: &TensorDoc,
    docs: &BTreeMap<String, TensorDoc>,
    built: &mut BTreeMap<String, Arc<EstimatedPartitionedTensor>>,
) -> Result<EstimatedPartitionedTensor> {
    fn value(
        v: &ValueDoc,
        docs: &BTreeMap<String, TensorDoc>,
        built: &mut BTreeMap<String, Arc<EstimatedPartitionedTensor>>,
    ) -> Result<ValueExpr> {
        Ok(match v {
            ValueDoc::VolumePower(n) => ValueExpr::VolumePower(parse_u128(n)?),
            ValueDoc::ClosedForm(c) => ValueExpr::ClosedForm(c.clone()),
            ValueDoc::Nested(fp) => {
                if let Some(t) = built.get(fp) {
                    ValueExpr::Nested(t.clone())
                } else {
                    let sub = docs.get(fp).ok_or_else(|| Error::Invalid(format!("missing nested tensor {fp}")))?;
                    let t = Arc::new(build_from_doc(sub, docs, built)?);
                    built.insert(fp.clone(), t.clone());
                    ValueExpr::Nested(t)
                }
            }
            ValueDoc::Product(f) => ValueExpr::Product(f.iter().map(|e| value(e, docs, built)).collect::<Result<_>>()?),
        })
    }
    let mut constituents = BTreeMap::new();
    for c in &d.constituents {
        constituents.insert(c.annotation, Constituent { shape: c.shape, value: value(&c.value, docs, built)? });
    }
    let sizes = [0, 1, 2].map(|l| d.group_sizes[l].iter().map(|s| parse_u128(s)).collect::<Result<Vec<_>>>());
    let [a, b, c] = sizes;
    EstimatedPartitionedTensor::new(
        [a?, b?, c?],
        constituents,
        d.border_rank_bound.as_deref().map(parse_u128).transpose()?,
        d.symmetric,
        d.label.clone(),
    )
}

fn compute_fingerprint(group_sizes: &[Vec<u128>; 3], constituents: &BTreeMap<Annotation, Constituent>, symmetric: bool) -> String {
    let values: BTreeMap<Annotation, String> = constituents.iter().map(|(a, c)| (*a, c.value.canonical())).collect();
    let best = (0..3)
        .map(|r| {
            let mut s = format!("sym={symmetric};sizes=");
            for l in 0..3 {
                let v = &group_sizes[(l + r) % 3];
                s.push_str(&format!("{v:?};"));
            }
            let mut items: Vec<String> = constituents
                .iter()
                .map(|(a, c)| {
                    let ra = rotate_annotation(*a, r);
                    let shape = c.shape.map(|sh| rotate_shape(sh, r)).map(|sh| sh.to_string()).unwrap_or_default();
                    format!("{ra:?}:{shape}:{}", values[a])
                })
                .collect();
            items.sort();
            s.push_str(&items.join("|"));
            s
        })
        .min()
        .expect("three rotations");
    let digest = Sha256::digest(best.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// `tcw(q)` with groups `{0}`, `{1..q}`, `{q+1}`, target `q + 2` and the
/// explicit tensor attached.
pub fn build_cw(q: u32) -> Result<EstimatedPartitionedTensor> {
    if q == 0 {
        return Err(Error::Invalid("q must be at least 1".into()));
    }
    let t = cw_tensor(q);
    let group = |v: &Var| -> u32 {
        match v.path()[0] {
            0 => 0,
            i if i == q + 1 => 2,
            _ => 1,
        }
    };
    let gm = |s: &BTreeSet<Var>| s.iter().map(|v| (v.clone(), group(v))).collect::<BTreeMap<_, _>>();
    let groups = [gm(t.x_vars()), gm(t.y_vars()), gm(t.z_vars())];
    let pt = PartitionedTensor::new(t, groups)?;
    let q64 = q as u64;
    let mut constituents = BTreeMap::new();
    let shapes = [
        ([0, 1, 1], MatMulShape::new(1, 1, q64)),
        ([1, 0, 1], MatMulShape::new(q64, 1, 1)),
        ([1, 1, 0], MatMulShape::new(1, q64, 1)),
        ([2, 0, 0], MatMulShape::new(1, 1, 1)),
        ([0, 2, 0], MatMulShape::new(1, 1, 1)),
        ([0, 0, 2], MatMulShape::new(1, 1, 1)),
    ];
    for (a, s) in shapes {
        constituents.insert(a, Constituent { shape: Some(s), value: ValueExpr::VolumePower(s.volume()) });
    }
    let sizes = vec![1, q as u128, 1];
    let ept = EstimatedPartitionedTensor::new(
        [sizes.clone(), sizes.clone(), sizes],
        constituents,
        Some(q as u128 + 2),
        true,
        format!("tcw({q})"),
    )?;
    ept.with_explicit(Arc::new(pt))
}

/// Squares an explicit partitioned tensor and coarsens its groups with
/// `coarsen(i1, i2)`; the canonical choice is `i1 + i2`.
pub fn repartition_square_explicit(
    t: &PartitionedTensor,
    coarsen: impl Fn(u32, u32) -> u32,
) -> Result<PartitionedTensor> {
    let sq = tensor_product(t.tensor(), t.tensor());
    let mut groups: [BTreeMap<Var, u32>; 3] = Default::default();
    for l in 0..3 {
        for (v1, g1) in &t.groups()[l] {
            for (v2, g2) in &t.groups()[l] {
                let mut p = v1.path().to_vec();
                p.extend_from_slice(v2.path());
                groups[l].insert(Var(p), coarsen(*g1, *g2));
            }
        }
    }
    PartitionedTensor::new(sq, groups)
}

fn add3(a: &Annotation, b: &Annotation) -> Annotation {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn product_shape(a: Option<MatMulShape>, b: Option<MatMulShape>) -> Option<MatMulShape> {
    let (a, b) = (a?, b?);
    Some(MatMulShape::new(a.n * b.n, a.m * b.m, a.p * b.p))
}

/// Orientation of a shape with two unit dimensions, e.g. `⟨1,1,v⟩ -> 2`.
fn thin_axis(s: &MatMulShape) -> Option<usize> {
    match (s.n, s.m, s.p) {
        (1, 1, 1) => None,
        (_, 1, 1) => Some(0),
        (1, _, 1) => Some(1),
        (1, 1, _) => Some(2),
        _ => None,
    }
}

/// Canonical squaring: the square of `t` with groups coarsened by index sum.
///
/// Zero-containing constituents of the square are sums of identity slices
/// through a common singleton and become matrix multiplication tensors whose
/// volume is the total entry count; a single factor product of matmul tensors
/// is a matmul tensor; every other constituent becomes a nested sub-tensor
/// whose groups are the first-factor indices and whose values are products of
/// factor values. When `t` carries an explicit tensor and the square is small
/// enough, the square is also built explicitly and the classification is
/// verified against [`recognize_matmul`].
pub fn canonical_repartition_square(t: &EstimatedPartitionedTensor) -> Result<EstimatedPartitionedTensor> {
    canonical_repartition_square_with(t, DEFAULT_EXPLICIT_ENTRY_CAP)
}

pub fn canonical_repartition_square_with(t: &EstimatedPartitionedTensor, explicit_entry_cap: usize) -> Result<EstimatedPartitionedTensor> {
    let d = t.tightness().ok_or_else(|| Error::Invalid("canonical squaring needs a tight tensor".into()))?;
    if !t.symmetric() {
        return Err(Error::Invalid("canonical squaring is defined here for symmetric tensors".into()));
    }
    let sizes = t.group_sizes();
    let new_sizes: [Vec<u128>; 3] = [0, 1, 2].map(|l| {
        let s = &sizes[l];
        let mut out = vec![0u128; 2 * (s.len() - 1) + 1];
        for (a, sa) in s.iter().enumerate() {
            for (b, sb) in s.iter().enumerate() {
                out[a + b] += sa * sb;
            }
        }
        out
    });
    let mut pairs: BTreeMap<Annotation, Vec<(Annotation, Annotation)>> = BTreeMap::new();
    for s1 in t.constituents.keys() {
        for s2 in t.constituents.keys() {
            pairs.entry(add3(s1, s2)).or_default().push((*s1, *s2));
        }
    }
    let mut constituents = BTreeMap::new();
    for (big, members) in &pairs {
        let factor = |s: &Annotation| &t.constituents[s];
        let shape = if members.len() == 1 {
            let (a, b) = members[0];
            product_shape(factor(&a).shape, factor(&b).shape)
        } else if let Some(zl) = (0..3).find(|&l| big[l] == 0) {
            merged_zero_shape(big, zl, members, &factor, &new_sizes)
        } else {
            None
        };
        let c = match shape {
            Some(s) => Constituent { shape: Some(s), value: ValueExpr::VolumePower(s.volume()) },
            None => {
                let mut sub_sizes: [Vec<u128>; 3] = [vec![0; d as usize + 1], vec![0; d as usize + 1], vec![0; d as usize + 1]];
                let mut sub = BTreeMap::new();
                for (a, b) in members {
                    for l in 0..3 {
                        sub_sizes[l][a[l] as usize] = sizes[l][a[l] as usize] * sizes[l][b[l] as usize];
                    }
                    let (fa, fb) = (factor(a), factor(b));
                    let shape = product_shape(fa.shape, fb.shape);
                    let value = ValueExpr::product(vec![fa.value.clone(), fb.value.clone()]);
                    sub.insert(*a, Constituent { shape, value });
                }
                let label = format!("{}[{},{},{}]", t.label(), big[0], big[1], big[2]);
                let nested = EstimatedPartitionedTensor::new(sub_sizes, sub, None, false, label)?;
                Constituent { shape: None, value: ValueExpr::Nested(Arc::new(nested)) }
            }
        };
        constituents.insert(*big, c);
    }
    let bound = t.border_rank_bound.map(|b| b.checked_mul(b).expect("border rank bound overflow"));
    let label = format!("{}'", t.label());
    let out = EstimatedPartitionedTensor::new(new_sizes, constituents, bound, true, label)?;
    match t.explicit() {
        Some(pt) if pt.tensor().len().saturating_mul(pt.tensor().len()) <= explicit_entry_cap => {
            let sq = repartition_square_explicit(pt, |a, b| a + b)?;
            out.with_explicit(Arc::new(sq))
        }
        _ => Ok(out),
    }
}

/// Shape of a merged zero-containing constituent, if its factor products
/// are identity slices through the same singleton covering the whole groups.
fn merged_zero_shape<'a>(
    big: &Annotation,
    zl: usize,
    members: &[(Annotation, Annotation)],
    factor: &impl Fn(&Annotation) -> &'a Constituent,
    new_sizes: &[Vec<u128>; 3],
) -> Option<MatMulShape> {
    // Axis of the non-unit dimension for each zero position: x-zero gives
    // ⟨1,1,v⟩, y-zero ⟨v,1,1⟩, z-zero ⟨1,v,1⟩.
    let axis = [2, 0, 1][zl];
    let mut vol: u128 = 0;
    for (a, b) in members {
        let s = product_shape(factor(a).shape, factor(b).shape)?;
        match thin_axis(&s) {
            Some(ax) if ax == axis => {}
            None if s.volume() == 1 => {}
            _ => return None,
        }
        vol += s.volume();
    }
    let (l1, l2) = ((zl + 1) % 3, (zl + 2) % 3);
    if new_sizes[zl][0] != 1 || new_sizes[l1][big[l1] as usize] != vol || new_sizes[l2][big[l2] as usize] != vol {
        return None;
    }
    let v = vol as u64;
    Some(match axis {
        0 => MatMulShape::new(v, 1, 1),
        1 => MatMulShape::new(1, v, 1),
        _ => MatMulShape::new(1, 1, v),
    })
}

/// `r` canonical squarings of `tcw(q)`.
pub fn cw_power(q: u32, r: u32) -> Result<EstimatedPartitionedTensor> {
    let mut t = build_cw(q)?;
    for _ in 0..r {
        t = canonical_repartition_square(&t)?;
    }
    Ok(t)
}

/// Constituents of the `N`-th tensor power, indexed by index triples.
#[derive(Clone, Debug)]
pub struct PowerTensor {
    pub n: u32,
    pub base_fingerprint: String,
    pub constituents: BTreeMap<IndexTriple, Constituent>,
}

impl PowerTensor {
    pub fn support(&self) -> impl Iterator<Item = &IndexTriple> {
        self.constituents.keys()
    }
}

/// `N`-fold power: support is the `N`-fold product of supports, shapes and
/// values multiply.
pub fn partitioned_power(t: &EstimatedPartitionedTensor, n: u32, support_cap: u128) -> Result<PowerTensor> {
    if n == 0 {
        return Err(Error::Invalid("power must be positive".into()));
    }
    let base: Vec<(&Annotation, &Constituent)> = t.constituents.iter().collect();
    let needed = (base.len() as u128).checked_pow(n).unwrap_or(u128::MAX);
    if needed > support_cap {
        return Err(Error::ResourceLimit { what: format!("support of power {n}"), needed, limit: support_cap });
    }
    let mut out = BTreeMap::new();
    let mut idx = vec![0usize; n as usize];
    loop {
        let parts: Vec<Annotation> = idx.iter().map(|&i| *base[i].0).collect();
        let shape = idx.iter().try_fold(MatMulShape::new(1, 1, 1), |acc, &i| product_shape(Some(acc), base[i].1.shape));
        let value = ValueExpr::product(idx.iter().map(|&i| base[i].1.value.clone()).collect());
        out.insert(IndexTriple::from_annotations(&parts), Constituent { shape, value });
        let mut pos = n as usize;
        loop {
            if pos == 0 {
                return Ok(PowerTensor { n, base_fingerprint: t.fingerprint.clone(), constituents: out });
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < base.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cw_basics() {
        let t = build_cw(2).unwrap();
        assert_eq!(t.support().len(), 6);
        assert_eq!(t.tightness(), Some(2));
        assert_eq!(t.border_rank_bound(), Some(4));
        assert_eq!(t.explicit().unwrap().tensor().len(), 9);
        assert!(t.is_symmetric());
        assert!(t.explicit().unwrap().is_symmetric());
        assert!(t.class_t_membership());
        assert!(t.is_cw_like().cw_like);
        let r = build_cw(1).unwrap().is_cw_like();
        assert_eq!(r.violated_clause, Some(1));
    }

    #[test]
    fn square_structure() {
        let t = canonical_repartition_square(&build_cw(2).unwrap()).unwrap();
        assert!(t.explicit().is_some(), "small squares are cross-checked explicitly");
        assert_eq!(t.support().len(), 15);
        assert_eq!(t.orbits().len(), 5);
        assert_eq!(t.tightness(), Some(4));
        assert_eq!(t.group_sizes()[0], vec![1, 4, 6, 4, 1]);
        let (z, n) = t.split_support();
        assert_eq!(z.len(), 12);
        assert_eq!(n, [[1, 1, 2], [1, 2, 1], [2, 1, 1]].into_iter().collect());
        assert_eq!(t.constituent(&[0, 2, 2]).unwrap().shape, Some(MatMulShape::new(1, 1, 6)));
        assert!(t.is_symmetric());
        assert!(t.class_t_membership());
        assert!(t.is_cw_like().cw_like);
    }

    #[test]
    fn tightness_absent() {
        let s: BTreeSet<Annotation> = [[0, 0, 1], [1, 1, 1]].into_iter().collect();
        assert_eq!(tightness_of(&s), None);
    }

    #[test]
    fn fingerprint_is_rotation_invariant() {
        let t = cw_power(3, 1).unwrap();
        let fp = |a: Annotation| match &t.constituent(&a).unwrap().value {
            ValueExpr::Nested(n) => n.fingerprint().to_string(),
            _ => panic!("expected nested"),
        };
        assert_eq!(fp([1, 1, 2]), fp([1, 2, 1]));
        assert_eq!(fp([1, 1, 2]), fp([2, 1, 1]));
    }

    #[test]
    fn document_round_trip() {
        let t = cw_power(2, 2).unwrap();
        let doc = t.to_document();
        let back = EstimatedPartitionedTensor::from_document(&doc).unwrap();
        assert_eq!(back.fingerprint(), t.fingerprint());
        assert_eq!(back.to_document(), doc);
    }

    #[test]
    fn index_triple_text() {
        let t = IndexTriple::parse("(00,11,11)").unwrap();
        assert_eq!(t.x, vec![0, 0]);
        assert_eq!(t.compact(), "(00,11,11)");
        let w = IndexTriple { x: vec![10, 0], y: vec![0, 1], z: vec![1, 2] };
        assert_eq!(IndexTriple::parse(&w.compact()).unwrap(), w);
        assert!(IndexTriple::parse("(0,11,1)").is_err());
    }

    #[test]
    fn power_supports() {
        let t = build_cw(2).unwrap();
        assert_eq!(partitioned_power(&t, 1, DEFAULT_SUPPORT_CAP).unwrap().constituents.len(), 6);
        assert_eq!(partitioned_power(&t, 2, DEFAULT_SUPPORT_CAP).unwrap().constituents.len(), 36);
        assert_eq!(partitioned_power(&t, 3, DEFAULT_SUPPORT_CAP).unwrap().constituents.len(), 216);
        assert!(matches!(partitioned_power(&t, 9, DEFAULT_SUPPORT_CAP), Err(Error::ResourceLimit { .. })));
    }
}
