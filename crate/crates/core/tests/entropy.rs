use std::collections::BTreeSet;

use lasermm::entropy::{
    bisect_root, compatibility_penalty, entropy, entropy_perspective, marginals, marginals_determine,
    max_entropy_with_marginals, maximize_1d, maximize_concave_simplex, maximize_multistart, SimplexObjective,
    SolverOptions,
};
use lasermm::error::Error;
use lasermm::partition::{cw_power, Annotation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn random_support(rng: &mut ChaCha8Rng) -> Vec<Annotation> {
    let k = rng.gen_range(2..=4u32);
    let m = rng.gen_range(2..=10usize).min((k * k * k) as usize);
    let mut s = BTreeSet::new();
    while s.len() < m {
        s.insert([rng.gen_range(0..k), rng.gen_range(0..k), rng.gen_range(0..k)]);
    }
    s.into_iter().collect()
}

#[test]
fn entropy_examples_and_domain() {
    assert_eq!(entropy(&[1.0]).unwrap(), 0.0);
    assert!((entropy(&[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-15);
    assert!((entropy(&[0.25; 4]).unwrap() - 2.0).abs() < 1e-15);
    assert!((entropy(&[0.0, 1.0]).unwrap()).abs() < 1e-15);
    assert!(matches!(entropy(&[-0.1, 1.1]), Err(Error::Domain(_))));
    assert!(matches!(entropy(&[0.3, 0.3]), Err(Error::Domain(_))));
}

#[test]
fn perspective_is_homogeneous_and_concave() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let u: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
        let v: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = u.iter().sum();
        let scaled: Vec<f64> = u.iter().map(|x| x / s).collect();
        assert!((entropy_perspective(&u) - s * entropy(&scaled).unwrap()).abs() < 1e-12);
        let t = rng.gen::<f64>();
        let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        assert!(entropy_perspective(&mix) >= t * entropy_perspective(&u) + (1.0 - t) * entropy_perspective(&v) - 1e-12);
    }
}

#[test]
fn entropy_is_concave_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let p = random_simplex(&mut rng, 6);
        let q = random_simplex(&mut rng, 6);
        let t = rng.gen::<f64>();
        let mix: Vec<f64> = p.iter().zip(&q).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let s: f64 = mix.iter().sum();
        let mix: Vec<f64> = mix.iter().map(|x| x / s).collect();
        let lhs = entropy(&mix).unwrap();
        let rhs = t * entropy(&p).unwrap() + (1.0 - t) * entropy(&q).unwrap();
        assert!(lhs >= rhs - 1e-12);
    }
}

#[test]
fn penalty_is_nonnegative_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = SolverOptions::default();
    for _ in 0..200 {
        let support = random_support(&mut rng);
        let p = random_simplex(&mut rng, support.len());
        let g = compatibility_penalty(&support, &p, &opts).unwrap();
        assert!(g >= -1e-9, "penalty {g} on {support:?}");
        if marginals_determine(&support) {
            assert!(g.abs() < 1e-8);
        }
    }
}

#[test]
fn max_entropy_reproduces_own_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = SolverOptions::default();
    for _ in 0..50 {
        let support = random_support(&mut rng);
        let p = random_simplex(&mut rng, support.len());
        let target = marginals(&support, &p);
        let (q, h) = max_entropy_with_marginals(&support, &target, None, &opts).unwrap();
        let got = marginals(&support, &q);
        for l in 0..3 {
            for (k, v) in &target[l] {
                assert!((got[l][k] - v).abs() < 1e-9);
            }
        }
        assert!(h >= entropy(&p).unwrap() - 1e-9);
    }
}

#[test]
fn penalty_is_positive_somewhere_on_the_square_support() {
    let t = cw_power(2, 1).unwrap();
    let support: Vec<Annotation> = t.support().into_iter().collect();
    assert!(!marginals_determine(&support));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = SolverOptions::default();
    let best = (0..20)
        .map(|_| compatibility_penalty(&support, &random_simplex(&mut rng, support.len()), &opts).unwrap())
        .fold(0.0f64, f64::max);
    assert!(best > 1e-3, "largest penalty seen {best}");
}

#[test]
fn cw_support_is_determined_by_marginals() {
    let t = cw_power(3, 0).unwrap();
    let support: Vec<Annotation> = t.support().into_iter().collect();
    assert!(marginals_determine(&support));
}

/// `Σ_i a_i log w_i`: maximized at `w = a / Σ a`.
struct WeightedLog(Vec<f64>);

impl SimplexObjective for WeightedLog {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn value_grad(&mut self, w: &[f64]) -> (f64, Vec<f64>) {
        let v = self.0.iter().zip(w).map(|(a, x)| a * x.ln()).sum();
        let g = self.0.iter().zip(w).map(|(a, x)| a / x).collect();
        (v, g)
    }
}

#[test]
fn simplex_maximizer_finds_known_optimum() {
    let a = vec![1.0, 2.0, 3.0, 4.0];
    let opts = SolverOptions::default();
    let m = maximize_concave_simplex(&mut WeightedLog(a.clone()), None, &opts).unwrap();
    for (x, ai) in m.point.iter().zip(&a) {
        assert!((x - ai / 10.0).abs() < 1e-6, "{:?}", m.point);
    }
    assert!(m.gap <= opts.gap_tolerance.max(opts.stall_gap_tolerance));
}

#[test]
fn restarts_agree_on_concave_objectives() {
    let a = vec![0.5, 1.5, 2.0];
    let base = SolverOptions::default();
    let (m1, _) = maximize_multistart(&mut WeightedLog(a.clone()), None, &SolverOptions { restarts: 1, ..base.clone() }).unwrap();
    let (m8, _) = maximize_multistart(&mut WeightedLog(a), None, &SolverOptions { restarts: 8, seed: 99, ..base }).unwrap();
    assert!((m1.value - m8.value).abs() < 1e-7);
}

#[test]
fn golden_section_and_bisection() {
    let (x, fx) = maximize_1d(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-12);
    assert!((x - 0.3).abs() < 1e-6 && fx.abs() < 1e-12);
    let g = |r: f64| Ok(r * r);
    let a = bisect_root(g, 2.0, 3.0, 6.25, 1e-9).unwrap();
    let b = bisect_root(g, 2.0, 3.0, 6.25, 1e-12).unwrap();
    assert!((a - 2.5).abs() < 1e-9 && (a - b).abs() < 1e-9);
    assert!(matches!(bisect_root(g, 2.0, 3.0, 10.0, 1e-9), Err(Error::Bracket { .. })));
}
