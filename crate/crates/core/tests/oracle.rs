use lasermm::oracle::{
    brute_vcw, enumerate_zero_sequences, is_coherent, is_consistent, is_strongly_disjoint, validate_coherence_lemma,
    verify_witness, IndexTriple, OracleLimits,
};
use lasermm::partition::{build_cw, canonical_repartition_square};
use lasermm::tensor::MatMulShape;
use lasermm::values::{laser_value, Mode, ValueContext};
use lasermm::Error;

fn it(s: &str) -> IndexTriple {
    IndexTriple::parse(s).unwrap()
}

#[test]
fn first_power_value_is_exact() {
    let ctx = ValueContext::default();
    let limits = OracleLimits::default();
    for q in 1..=3u32 {
        let t = build_cw(q).unwrap();
        for rho in [2.0, 2.5, 3.0] {
            let r = brute_vcw(&ctx, &t, rho, 1, &limits).unwrap();
            let expect = (q as f64).powf(rho / 3.0) + 1.0;
            assert!((r.value - expect).abs() <= 1e-12 * expect);
            assert!(is_strongly_disjoint(&r.survivors));
            assert!(verify_witness(&t, &r).unwrap());
        }
    }
}

#[test]
fn second_power_is_supermultiplicative_and_below_laser_value() {
    let ctx = ValueContext::default();
    let limits = OracleLimits::default();
    for q in 1..=3u32 {
        let t = build_cw(q).unwrap();
        for rho in [2.0, 2.5, 3.0] {
            let v1 = brute_vcw(&ctx, &t, rho, 1, &limits).unwrap().value;
            let r2 = brute_vcw(&ctx, &t, rho, 2, &limits).unwrap();
            assert!(r2.value >= v1 * v1 * (1.0 - 1e-12), "q={q} rho={rho}: {} < {}", r2.value, v1 * v1);
            assert!(verify_witness(&t, &r2).unwrap());
            let upper = laser_value(&ctx, &t, rho, Mode::Upper).unwrap().log2_value.exp2();
            assert!(v1 <= upper * (1.0 + 1e-12));
            assert!(r2.value.sqrt() <= upper * (1.0 + 1e-12));
        }
    }
}

#[test]
fn oracle_refuses_beyond_its_limits() {
    let ctx = ValueContext::default();
    let t = build_cw(2).unwrap();
    let e = brute_vcw(&ctx, &t, 2.5, 3, &OracleLimits::default()).unwrap_err();
    assert!(matches!(e, Error::ResourceLimit { .. }));
    let tight = OracleLimits { max_zero_sequences: 10, ..OracleLimits::default() };
    assert!(matches!(enumerate_zero_sequences(&t, 2, &tight), Err(Error::ResourceLimit { .. })));
}

#[test]
fn zero_sequences_of_cw_powers() {
    let limits = OracleLimits::default();
    let t = build_cw(2).unwrap();
    let zs = enumerate_zero_sequences(&t, 2, &limits).unwrap();
    assert_eq!(zs.len(), 36);
    let sq = canonical_repartition_square(&t).unwrap();
    assert_eq!(enumerate_zero_sequences(&sq, 1, &limits).unwrap().len(), 12);
}

#[test]
fn merge_set_is_a_coherent_matrix_product() {
    for q in [2u32, 3, 4] {
        let t = build_cw(q).unwrap();
        let set = [it("(00,11,11)"), it("(00,02,20)"), it("(00,20,02)")];
        let qq = (q * q + 2) as u64;
        assert_eq!(is_consistent(&set, t.explicit().unwrap()), Some(MatMulShape::new(1, 1, qq)));
        assert!(is_coherent(&set));
    }
}

#[test]
fn consistency_implies_coherence_on_cw_squares() {
    let limits = OracleLimits::default();
    for q in [2u32, 3] {
        let r = validate_coherence_lemma(&build_cw(q).unwrap(), 2, 3, &limits).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.nontrivial_consistent_sets > 0);
        assert!(r.violations.is_empty());
    }
}
