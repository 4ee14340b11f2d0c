use ldcone::cone::{member_primal, project_cone, ConePoint, DEFAULT_TOL};
use ldcone::linalg::SymMat;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn point(d: usize) -> impl Strategy<Value = ConePoint> {
    (
        -5.0..5.0f64,
        -5.0..5.0f64,
        proptest::collection::vec(-5.0..5.0f64, d * (d + 1) / 2),
    )
        .prop_map(move |(x, y, entries)| {
            let mut k = 0;
            let z = SymMat::from_lower_fn(d, |_, _| {
                k += 1;
                entries[k - 1]
            });
            ConePoint { x, y, z }
        })
}

fn any_point() -> impl Strategy<Value = ConePoint> {
    prop_oneof![point(2), point(3)]
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 256,
        rng_seed: RngSeed::Fixed(0x005e_ed1d),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn projection_is_a_fixed_point(p in any_point()) {
        let q = project_cone(&p, DEFAULT_TOL, 200).unwrap().point;
        prop_assert!(member_primal(&q, 1e-7));
        let qq = project_cone(&q, DEFAULT_TOL, 200).unwrap().point;
        prop_assert!(qq.dist(&q) <= 1e-7 * (1.0 + q.norm()));
    }

    // Moreau: the residual P_K(p) - p lies in K* and is orthogonal to P_K(p).
    #[test]
    fn moreau_residual_is_dual_and_orthogonal(p in any_point()) {
        let proj = project_cone(&p, DEFAULT_TOL, 200).unwrap();
        let q = proj.point;
        let r = q.sub(&p);
        let scale = 1.0 + p.norm();
        prop_assert!(q.inner(&r).abs() <= 1e-6 * scale * scale);
        // dist(r, K*) = ||P_K(-r)||
        let back = project_cone(&r.scale(-1.0), DEFAULT_TOL, 200).unwrap();
        prop_assert!(back.point.norm() <= 1e-6 * scale);
        prop_assert!((proj.dist - r.norm()).abs() <= 1e-7 * scale);
    }
}
