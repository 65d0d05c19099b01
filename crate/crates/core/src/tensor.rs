//! Exact sparse trilinear forms.
//!
//! A [`Tensor`] is a finite sum `Σ c · x · y · z` over three disjoint sets of
//! variables. Variables are structured paths ([`Var`]) so that products and
//! direct sums keep track of where each variable came from. Coefficients are
//! arbitrary-precision integers by default; the identity checker in
//! [`crate::identity`] instantiates the same type over rationals.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg};

use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

/// Variable identifier: a path of small integers.
///
/// Tensor products concatenate paths, direct sums prefix a tag. All
/// constructors in this crate produce variable sets whose paths share a
/// common length, which keeps concatenation injective.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Var(pub Vec<u32>);

impl Var {
    pub fn new(path: impl Into<Vec<u32>>) -> Self {
        Var(path.into())
    }

    pub fn leaf(i: u32) -> Self {
        Var(vec![i])
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    fn concat(&self, other: &Var) -> Var {
        let mut p = Vec::with_capacity(self.0.len() + other.0.len());
        p.extend_from_slice(&self.0);
        p.extend_from_slice(&other.0);
        Var(p)
    }

    fn tagged(&self, tag: u32) -> Var {
        let mut p = Vec::with_capacity(self.0.len() + 1);
        p.push(tag);
        p.extend_from_slice(&self.0);
        Var(p)
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

/// Coefficient ring for tensors.
pub trait Coeff:
    Clone + PartialEq + fmt::Display + Zero + One + Add<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
}

impl<T> Coeff for T where
    T: Clone + PartialEq + fmt::Display + Zero + One + Add<Output = T> + Mul<Output = T> + Neg<Output = T>
{
}

pub type Entry = (Var, Var, Var);

/// Sparse trilinear form over three variable sets.
#[derive(Clone, PartialEq, Eq)]
pub struct Tensor<C = BigInt> {
    x_vars: BTreeSet<Var>,
    y_vars: BTreeSet<Var>,
    z_vars: BTreeSet<Var>,
    entries: BTreeMap<Entry, C>,
}

impl<C> Default for Tensor<C> {
    fn default() -> Self {
        Tensor {
            x_vars: BTreeSet::new(),
            y_vars: BTreeSet::new(),
            z_vars: BTreeSet::new(),
            entries: BTreeMap::new(),
        }
    }
}

impl<C: Coeff> fmt::Debug for Tensor<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}x{}, {} entries]", self.x_vars.len(), self.y_vars.len(), self.z_vars.len(), self.entries.len())
    }
}

impl<C: Coeff> Tensor<C> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Empty tensor over the given variable sets.
    pub fn with_vars(
        x_vars: impl IntoIterator<Item = Var>,
        y_vars: impl IntoIterator<Item = Var>,
        z_vars: impl IntoIterator<Item = Var>,
    ) -> Self {
        Tensor {
            x_vars: x_vars.into_iter().collect(),
            y_vars: y_vars.into_iter().collect(),
            z_vars: z_vars.into_iter().collect(),
            entries: BTreeMap::new(),
        }
    }

    /// Adds `c · x y z`, registering the variables. Zero results are dropped.
    pub fn add_term(&mut self, x: Var, y: Var, z: Var, c: C) {
        self.x_vars.insert(x.clone());
        self.y_vars.insert(y.clone());
        self.z_vars.insert(z.clone());
        let key = (x, y, z);
        let sum = match self.entries.remove(&key) {
            Some(old) => old + c,
            None => c,
        };
        if !sum.is_zero() {
            self.entries.insert(key, sum);
        }
    }

    pub fn x_vars(&self) -> &BTreeSet<Var> {
        &self.x_vars
    }

    pub fn y_vars(&self) -> &BTreeSet<Var> {
        &self.y_vars
    }

    pub fn z_vars(&self) -> &BTreeSet<Var> {
        &self.z_vars
    }

    pub fn entries(&self) -> &BTreeMap<Entry, C> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn coefficient(&self, x: &Var, y: &Var, z: &Var) -> Option<&C> {
        self.entries.get(&(x.clone(), y.clone(), z.clone()))
    }

    /// Sum of two tensors; variable sets are united.
    pub fn sum(&self, other: &Tensor<C>) -> Tensor<C> {
        let mut out = self.clone();
        out.x_vars.extend(other.x_vars.iter().cloned());
        out.y_vars.extend(other.y_vars.iter().cloned());
        out.z_vars.extend(other.z_vars.iter().cloned());
        for ((x, y, z), c) in &other.entries {
            out.add_term(x.clone(), y.clone(), z.clone(), c.clone());
        }
        out
    }

    pub fn scale(&self, c: &C) -> Tensor<C> {
        let mut out = Tensor::with_vars(self.x_vars.clone(), self.y_vars.clone(), self.z_vars.clone());
        if c.is_zero() {
            return out;
        }
        for (k, v) in &self.entries {
            out.entries.insert(k.clone(), v.clone() * c.clone());
        }
        out
    }

    /// Restriction to the given variable subsets (zeroing everything else).
    pub fn restrict(
        &self,
        keep_x: impl Fn(&Var) -> bool,
        keep_y: impl Fn(&Var) -> bool,
        keep_z: impl Fn(&Var) -> bool,
    ) -> Tensor<C> {
        let mut out = Tensor::with_vars(
            self.x_vars.iter().filter(|v| keep_x(v)).cloned(),
            self.y_vars.iter().filter(|v| keep_y(v)).cloned(),
            self.z_vars.iter().filter(|v| keep_z(v)).cloned(),
        );
        for ((x, y, z), c) in &self.entries {
            if keep_x(x) && keep_y(y) && keep_z(z) {
                out.entries.insert((x.clone(), y.clone(), z.clone()), c.clone());
            }
        }
        out
    }

    /// Debug dump: one line per entry `x * y * z * coeff`, sorted.
    pub fn dump(&self) -> String {
        let mut lines: Vec<String> = self
            .entries
            .iter()
            .map(|((x, y, z), c)| format!("{x} * {y} * {z} * {c}"))
            .collect();
        lines.sort();
        let mut s = lines.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s
    }

    /// Entry triples ignoring coefficients, rotated into canonical form for
    /// comparing tensors whose variable sets share one naming scheme.
    pub fn support_set(&self) -> BTreeSet<Entry> {
        self.entries.keys().cloned().collect()
    }
}

/// The matrix multiplication tensor shape `⟨n, m, p⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MatMulShape {
    pub n: u64,
    pub m: u64,
    pub p: u64,
}

impl MatMulShape {
    pub fn new(n: u64, m: u64, p: u64) -> Self {
        assert!(n >= 1 && m >= 1 && p >= 1, "matrix multiplication dimensions must be positive");
        MatMulShape { n, m, p }
    }

    pub fn volume(&self) -> u128 {
        self.n as u128 * self.m as u128 * self.p as u128
    }

    pub fn rotate(&self) -> MatMulShape {
        MatMulShape { n: self.m, m: self.p, p: self.n }
    }
}

impl fmt::Display for MatMulShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{},{}>", self.n, self.m, self.p)
    }
}

/// `⟨n,m,p⟩ = Σ x_{ij} y_{jk} z_{ki}` with variables named by `[i, j]`,
/// `[j, k]`, `[k, i]` (zero-based).
pub fn matmul_tensor<C: Coeff>(shape: MatMulShape) -> Tensor<C> {
    let (n, m, p) = (shape.n as u32, shape.m as u32, shape.p as u32);
    let mut t = Tensor::new();
    for i in 0..n {
        for j in 0..m {
            for k in 0..p {
                t.add_term(Var(vec![i, j]), Var(vec![j, k]), Var(vec![k, i]), C::one());
            }
        }
    }
    t
}

/// Kronecker product. Variables of the result are concatenated paths.
pub fn tensor_product<C: Coeff>(a: &Tensor<C>, b: &Tensor<C>) -> Tensor<C> {
    let cross = |s: &BTreeSet<Var>, t: &BTreeSet<Var>| -> BTreeSet<Var> {
        s.iter().flat_map(|u| t.iter().map(move |v| u.concat(v))).collect()
    };
    let mut out = Tensor {
        x_vars: cross(&a.x_vars, &b.x_vars),
        y_vars: cross(&a.y_vars, &b.y_vars),
        z_vars: cross(&a.z_vars, &b.z_vars),
        entries: BTreeMap::new(),
    };
    debug_assert_eq!(out.x_vars.len(), a.x_vars.len() * b.x_vars.len());
    for ((x1, y1, z1), c1) in &a.entries {
        for ((x2, y2, z2), c2) in &b.entries {
            let c = c1.clone() * c2.clone();
            if !c.is_zero() {
                out.entries.insert((x1.concat(x2), y1.concat(y2), z1.concat(z2)), c);
            }
        }
    }
    out
}

/// Cyclic rotation: the `x,y,z` roles become `y,z,x`.
pub fn rotate<C: Coeff>(t: &Tensor<C>) -> Tensor<C> {
    Tensor {
        x_vars: t.y_vars.clone(),
        y_vars: t.z_vars.clone(),
        z_vars: t.x_vars.clone(),
        entries: t
            .entries
            .iter()
            .map(|((x, y, z), c)| ((y.clone(), z.clone(), x.clone()), c.clone()))
            .collect(),
    }
}

/// Direct sum on disjoint variables: `a`'s variables are tagged `0`, `b`'s `1`.
pub fn direct_sum<C: Coeff>(a: &Tensor<C>, b: &Tensor<C>) -> Tensor<C> {
    let tag = |s: &BTreeSet<Var>, t: u32| -> Vec<Var> { s.iter().map(|v| v.tagged(t)).collect() };
    let mut out = Tensor::with_vars(
        tag(&a.x_vars, 0).into_iter().chain(tag(&b.x_vars, 1)),
        tag(&a.y_vars, 0).into_iter().chain(tag(&b.y_vars, 1)),
        tag(&a.z_vars, 0).into_iter().chain(tag(&b.z_vars, 1)),
    );
    for (src, t) in [(a, 0u32), (b, 1u32)] {
        for ((x, y, z), c) in &src.entries {
            out.entries.insert((x.tagged(t), y.tagged(t), z.tagged(t)), c.clone());
        }
    }
    out
}

/// Variable bijections witnessing `t ≈ ⟨n,m,p⟩`: each variable is mapped to
/// its matrix position in [`matmul_tensor`] naming.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatMulWitness {
    pub shape: MatMulShape,
    pub x_map: BTreeMap<Var, (u32, u32)>,
    pub y_map: BTreeMap<Var, (u32, u32)>,
    pub z_map: BTreeMap<Var, (u32, u32)>,
}

/// Labels each variable by the class of its partner set. Returns `None` if the
/// classes do not partition `universe` (each variable of `universe` in exactly
/// one class).
fn partner_classes(
    owners: &BTreeSet<Var>,
    partners: &HashMap<&Var, BTreeSet<&Var>>,
    universe: &BTreeSet<Var>,
) -> Option<(BTreeMap<Var, u32>, BTreeMap<Var, u32>)> {
    // Distinct partner sets, ordered deterministically.
    let mut classes: BTreeMap<BTreeSet<&Var>, u32> = BTreeMap::new();
    for v in owners {
        let set = partners.get(v)?;
        let next = classes.len() as u32;
        classes.entry(set.clone()).or_insert(next);
    }
    // Renumber in sorted order so labels do not depend on insertion order.
    let ordered: Vec<BTreeSet<&Var>> = classes.keys().cloned().collect();
    let mut owner_label = BTreeMap::new();
    let mut partner_label = BTreeMap::new();
    for (idx, set) in ordered.iter().enumerate() {
        for p in set {
            if partner_label.insert((*p).clone(), idx as u32).is_some() {
                return None;
            }
        }
    }
    if partner_label.len() != universe.len() {
        return None;
    }
    for v in owners {
        let set = &partners[v];
        let idx = ordered.iter().position(|s| s == set)? as u32;
        owner_label.insert(v.clone(), idx);
    }
    Some((owner_label, partner_label))
}

/// Recognizes tensors equivalent (by renaming variables) to a matrix
/// multiplication tensor.
///
/// Rows of `x` are the classes of z-partner sets, columns the classes of
/// y-partner sets; the `y` and `z` labelings are read off the same classes.
/// The candidate relabeling is verified by rebuilding `⟨n,m,p⟩` exactly, so a
/// returned witness is always correct. The empty tensor is rejected.
pub fn recognize_matmul<C: Coeff>(t: &Tensor<C>) -> Option<MatMulWitness> {
    if t.is_empty() || t.entries.values().any(|c| !c.is_one()) {
        return None;
    }
    let mut xz: HashMap<&Var, BTreeSet<&Var>> = HashMap::new();
    let mut xy: HashMap<&Var, BTreeSet<&Var>> = HashMap::new();
    let mut yz: HashMap<&Var, BTreeSet<&Var>> = HashMap::new();
    for (x, y, z) in t.entries.keys() {
        xz.entry(x).or_default().insert(z);
        xy.entry(x).or_default().insert(y);
        yz.entry(y).or_default().insert(z);
    }
    // Only variables that occur in entries take part in the form.
    let used = |m: &HashMap<&Var, BTreeSet<&Var>>| -> BTreeSet<Var> { m.keys().map(|v| (*v).clone()).collect() };
    let xs = used(&xz);
    let ys = used(&yz);
    let zs: BTreeSet<Var> = t.entries.keys().map(|(_, _, z)| z.clone()).collect();
    if xs.len() != t.x_vars.len() || ys.len() != t.y_vars.len() || zs.len() != t.z_vars.len() {
        return None;
    }

    // x -> row i (z-partners {z_{ki}}), z -> i.
    let (x_row, z_row) = partner_classes(&xs, &xz, &zs)?;
    // x -> column j (y-partners {y_{jk}}), y -> j.
    let (x_col, y_col) = partner_classes(&xs, &xy, &ys)?;
    // y -> k (z-partners {z_{ki}}), z -> k.
    let (y_k, z_k) = partner_classes(&ys, &yz, &zs)?;

    let n = z_row.values().max()? + 1;
    let m = y_col.values().max()? + 1;
    let p = z_k.values().max()? + 1;
    let shape = MatMulShape::new(n as u64, m as u64, p as u64);
    if xs.len() as u64 != shape.n * shape.m || ys.len() as u64 != shape.m * shape.p || zs.len() as u64 != shape.p * shape.n {
        return None;
    }

    let x_map: BTreeMap<Var, (u32, u32)> = xs.iter().map(|v| (v.clone(), (x_row[v], x_col[v]))).collect();
    let y_map: BTreeMap<Var, (u32, u32)> = ys.iter().map(|v| (v.clone(), (y_col[v], y_k[v]))).collect();
    let z_map: BTreeMap<Var, (u32, u32)> = zs.iter().map(|v| (v.clone(), (z_k[v], z_row[v]))).collect();

    // Bijectivity onto the index grids.
    let distinct = |m: &BTreeMap<Var, (u32, u32)>| m.values().collect::<BTreeSet<_>>().len() == m.len();
    if !distinct(&x_map) || !distinct(&y_map) || !distinct(&z_map) {
        return None;
    }
    if t.len() as u128 != shape.volume() {
        return None;
    }
    for (x, y, z) in t.entries.keys() {
        let (i, j) = x_map[x];
        let (j2, k) = y_map[y];
        let (k2, i2) = z_map[z];
        if j != j2 || k != k2 || i != i2 {
            return None;
        }
    }
    Some(MatMulWitness { shape, x_map, y_map, z_map })
}

/// Searches for variable bijections making `a` and `b` equal.
///
/// Backtracking over x-variables with partner-count colorings; exponential in
/// the worst case and meant for the small constituent tensors handled here.
pub fn are_equivalent<C: Coeff>(a: &Tensor<C>, b: &Tensor<C>) -> bool {
    if a.len() != b.len()
        || a.x_vars.len() != b.x_vars.len()
        || a.y_vars.len() != b.y_vars.len()
        || a.z_vars.len() != b.z_vars.len()
    {
        return false;
    }
    if let (Some(wa), Some(wb)) = (recognize_matmul(a), recognize_matmul(b)) {
        return wa.shape == wb.shape;
    }
    let ia = Incidence::new(a);
    let ib = Incidence::new(b);
    if ia.x_colors_sorted() != ib.x_colors_sorted() {
        return false;
    }
    let mut state = Matching::default();
    extend_matching(&ia, &ib, 0, &mut state)
}

struct Incidence<'a, C> {
    t: &'a Tensor<C>,
    xs: Vec<&'a Var>,
    by_x: HashMap<&'a Var, Vec<(&'a Var, &'a Var, &'a C)>>,
    color: HashMap<&'a Var, (usize, usize, usize)>,
}

impl<'a, C: Coeff> Incidence<'a, C> {
    fn new(t: &'a Tensor<C>) -> Self {
        let mut by_x: HashMap<&Var, Vec<(&Var, &Var, &C)>> = HashMap::new();
        let mut deg_y: HashMap<&Var, usize> = HashMap::new();
        let mut deg_z: HashMap<&Var, usize> = HashMap::new();
        for ((x, y, z), c) in &t.entries {
            by_x.entry(x).or_default().push((y, z, c));
            *deg_y.entry(y).or_default() += 1;
            *deg_z.entry(z).or_default() += 1;
        }
        let mut color = HashMap::new();
        for x in &t.x_vars {
            let row = by_x.get(x).map(|v| v.as_slice()).unwrap_or(&[]);
            let sy: usize = row.iter().map(|(y, _, _)| deg_y[y]).sum();
            let sz: usize = row.iter().map(|(_, z, _)| deg_z[z]).sum();
            color.insert(x, (row.len(), sy, sz));
        }
        let mut xs: Vec<&Var> = t.x_vars.iter().collect();
        xs.sort_by_key(|x| std::cmp::Reverse(color[x].0));
        Incidence { t, xs, by_x, color }
    }

    fn x_colors_sorted(&self) -> Vec<(usize, usize, usize)> {
        let mut v: Vec<_> = self.color.values().cloned().collect();
        v.sort();
        v
    }
}

#[derive(Default, Clone)]
struct Matching<'a> {
    x: HashMap<&'a Var, &'a Var>,
    y: HashMap<&'a Var, &'a Var>,
    z: HashMap<&'a Var, &'a Var>,
    used_x: BTreeSet<&'a Var>,
    used_y: BTreeSet<&'a Var>,
    used_z: BTreeSet<&'a Var>,
}

fn extend_matching<'a, C: Coeff>(
    a: &Incidence<'a, C>,
    b: &Incidence<'a, C>,
    depth: usize,
    state: &mut Matching<'a>,
) -> bool {
    if depth == a.xs.len() {
        // Unused y/z variables (not appearing in entries) pair up arbitrarily.
        return true;
    }
    let xa = a.xs[depth];
    let row_a = a.by_x.get(xa).cloned().unwrap_or_default();
    for xb in b.t.x_vars.iter() {
        if state.used_x.contains(xb) || a.color[xa] != b.color[xb] {
            continue;
        }
        let row_b = b.by_x.get(xb).cloned().unwrap_or_default();
        // Try to extend y/z maps so that row_a maps onto row_b.
        let mut trial = state.clone();
        trial.x.insert(xa, xb);
        trial.used_x.insert(xb);
        if match_row(&row_a, &row_b, 0, &mut trial) && extend_matching(a, b, depth + 1, &mut trial) {
            *state = trial;
            return true;
        }
    }
    false
}

fn match_row<'a, C: Coeff>(
    row_a: &[(&'a Var, &'a Var, &'a C)],
    row_b: &[(&'a Var, &'a Var, &'a C)],
    idx: usize,
    state: &mut Matching<'a>,
) -> bool {
    if idx == row_a.len() {
        return true;
    }
    let (ya, za, ca) = row_a[idx];
    for &(yb, zb, cb) in row_b {
        if ca != cb {
            continue;
        }
        let y_ok = match state.y.get(ya) {
            Some(m) => *m == yb,
            None => !state.used_y.contains(yb),
        };
        let z_ok = match state.z.get(za) {
            Some(m) => *m == zb,
            None => !state.used_z.contains(zb),
        };
        if !(y_ok && z_ok) {
            continue;
        }
        // Distinct entries of row_a must land on distinct entries of row_b.
        if row_a[..idx]
            .iter()
            .any(|(y, z, _)| state.y.get(y) == Some(&yb) && state.z.get(z) == Some(&zb))
        {
            continue;
        }
        let mut trial = state.clone();
        if trial.y.insert(ya, yb).is_none() {
            trial.used_y.insert(yb);
        }
        if trial.z.insert(za, zb).is_none() {
            trial.used_z.insert(zb);
        }
        if match_row(row_a, row_b, idx + 1, &mut trial) {
            *state = trial;
            return true;
        }
    }
    false
}
