//! Exact verification of border-rank identities written as ε-polynomials.
//!
//! A rank-one term over `Q[ε]` is `s(ε) · a(ε) ⊗ b(ε) ⊗ c(ε)`, where `s` is a
//! scalar polynomial and `a, b, c` are linear forms whose coefficients are
//! polynomials. Expanding a sum of such terms gives an [`EpsPolynomial`]:
//! a map from ε-degree to a rational-coefficient [`Tensor`].

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, Var};

pub type Rat = BigRational;

fn rat(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Polynomial in ε with rational coefficients, zero coefficients omitted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalarPoly(pub BTreeMap<u32, Rat>);

impl ScalarPoly {
    pub fn monomial(deg: u32, c: i64) -> Self {
        let mut m = BTreeMap::new();
        if c != 0 {
            m.insert(deg, rat(c));
        }
        ScalarPoly(m)
    }

    pub fn one() -> Self {
        Self::monomial(0, 1)
    }

    pub fn add_term(&mut self, deg: u32, c: Rat) {
        let e = self.0.entry(deg).or_insert_with(Rat::zero);
        *e += c;
        if e.is_zero() {
            self.0.remove(&deg);
        }
    }

    fn mul(&self, other: &ScalarPoly) -> ScalarPoly {
        let mut out = ScalarPoly::default();
        for (d1, c1) in &self.0 {
            for (d2, c2) in &other.0 {
                out.add_term(d1 + d2, c1 * c2);
            }
        }
        out
    }

    fn negate(&mut self) {
        for c in self.0.values_mut() {
            *c = -c.clone();
        }
    }
}

/// Linear form `Σ_v p_v(ε) · v` over one variable set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearForm(pub BTreeMap<Var, ScalarPoly>);

impl LinearForm {
    pub fn term(mut self, v: Var, deg: u32, c: i64) -> Self {
        self.0.entry(v).or_default().add_term(deg, rat(c));
        self
    }
}

/// `scalar · a ⊗ b ⊗ c` over `Q[ε]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankOneTerm {
    pub scalar: ScalarPoly,
    pub x: LinearForm,
    pub y: LinearForm,
    pub z: LinearForm,
}

/// Tensor-valued polynomial in ε; zero coefficient tensors are omitted.
#[derive(Clone, Debug, Default)]
pub struct EpsPolynomial {
    coeffs: BTreeMap<u32, Tensor<Rat>>,
}

impl EpsPolynomial {
    pub fn coefficient(&self, deg: u32) -> Option<&Tensor<Rat>> {
        self.coeffs.get(&deg)
    }

    pub fn degrees(&self) -> impl Iterator<Item = u32> + '_ {
        self.coeffs.keys().copied()
    }

    pub fn max_degree(&self) -> Option<u32> {
        self.coeffs.keys().next_back().copied()
    }

    fn add_entry(&mut self, deg: u32, x: &Var, y: &Var, z: &Var, c: Rat) {
        let t = self.coeffs.entry(deg).or_default();
        t.add_term(x.clone(), y.clone(), z.clone(), c);
        if t.is_empty() {
            self.coeffs.remove(&deg);
        }
    }

    /// Exact expansion of a sum of rank-one terms.
    pub fn expand(terms: &[RankOneTerm]) -> EpsPolynomial {
        let mut out = EpsPolynomial::default();
        for t in terms {
            for (xv, xp) in &t.x.0 {
                for (yv, yp) in &t.y.0 {
                    let xy = xp.mul(yp);
                    for (zv, zp) in &t.z.0 {
                        let full = xy.mul(zp).mul(&t.scalar);
                        for (d, c) in full.0 {
                            out.add_entry(d, xv, yv, zv, c);
                        }
                    }
                }
            }
        }
        out
    }
}

/// The Coppersmith–Winograd tensor for parameter `q`, unpartitioned.
///
/// Variables are single-element paths `0, 1..=q, q+1`.
pub fn cw_tensor(q: u32) -> Tensor<BigInt> {
    let v = Var::leaf;
    let mut t = Tensor::new();
    for i in 1..=q {
        t.add_term(v(0), v(i), v(i), BigInt::one());
        t.add_term(v(i), v(0), v(i), BigInt::one());
        t.add_term(v(i), v(i), v(0), BigInt::one());
    }
    t.add_term(v(0), v(0), v(q + 1), BigInt::one());
    t.add_term(v(0), v(q + 1), v(0), BigInt::one());
    t.add_term(v(q + 1), v(0), v(0), BigInt::one());
    t
}

/// Which coefficient of the identity to perturb (negative control).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tamper {
    None,
    /// Negate the scalar of the second summand group.
    FlipSign,
    /// Replace `(1 - qε)` by `(1 - (q+1)ε)`.
    PerturbScalar,
}

/// Right-hand side of the border-rank identity for `tcw(q)` as `q + 2`
/// rank-one terms.
pub fn cw_identity_terms(q: u32, tamper: Tamper) -> Vec<RankOneTerm> {
    let v = Var::leaf;
    let mut terms = Vec::with_capacity(q as usize + 2);
    for i in 1..=q {
        let f = || LinearForm::default().term(v(0), 0, 1).term(v(i), 1, 1);
        terms.push(RankOneTerm { scalar: ScalarPoly::monomial(1, 1), x: f(), y: f(), z: f() });
    }
    let sum_form = || {
        let mut f = LinearForm::default().term(v(0), 0, 1);
        for i in 1..=q {
            f = f.term(v(i), 2, 1);
        }
        f
    };
    let mut minus = ScalarPoly::one();
    if tamper != Tamper::FlipSign {
        minus.negate();
    }
    terms.push(RankOneTerm { scalar: minus, x: sum_form(), y: sum_form(), z: sum_form() });
    let mut last = ScalarPoly::one();
    let slope = if tamper == Tamper::PerturbScalar { q as i64 + 1 } else { q as i64 };
    last.add_term(1, rat(-slope));
    let g = || LinearForm::default().term(v(0), 0, 1).term(v(q + 1), 3, 1);
    terms.push(RankOneTerm { scalar: last, x: g(), y: g(), z: g() });
    terms
}

/// Outcome of [`verify_cw_identity`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub q: u32,
    pub rank_one_terms: usize,
    pub passed: bool,
    /// First ε-degree (0..=3) whose coefficient differs from the expected one.
    pub first_mismatch_degree: Option<u32>,
    pub detail: String,
}

/// Expands the identity exactly and checks that degrees 0, 1, 2 vanish and
/// that degree 3 equals `tcw(q)`.
pub fn verify_cw_identity(q: u32, tamper: Tamper) -> IdentityReport {
    assert!(q >= 1, "q must be positive");
    let terms = cw_identity_terms(q, tamper);
    let poly = EpsPolynomial::expand(&terms);
    let expected: Tensor<Rat> = {
        let mut t = Tensor::new();
        for ((x, y, z), c) in cw_tensor(q).entries() {
            t.add_term(x.clone(), y.clone(), z.clone(), Rat::from_integer(c.clone()));
        }
        t
    };
    let mut first_mismatch_degree = None;
    let mut detail = String::from("ok");
    for d in 0..=3u32 {
        let got = poly.coefficient(d);
        let ok = match (d, got) {
            (0..=2, None) => true,
            (0..=2, Some(_)) => false,
            (_, Some(t)) => t.entries() == expected.entries(),
            (_, None) => false,
        };
        if !ok {
            first_mismatch_degree = Some(d);
            let n = got.map(|t| t.len()).unwrap_or(0);
            let bad = got
                .and_then(|t| t.entries().iter().find(|(k, c)| d < 3 || expected.entries().get(*k) != Some(*c)))
                .map(|((x, y, z), c)| format!("{x} * {y} * {z} * {c}"))
                .unwrap_or_else(|| "missing terms".into());
            detail = format!("coefficient of eps^{d} has {n} entries; first offending entry {bad}");
            break;
        }
    }
    IdentityReport {
        q,
        rank_one_terms: terms.len(),
        passed: first_mismatch_degree.is_none(),
        first_mismatch_degree,
        detail,
    }
}
