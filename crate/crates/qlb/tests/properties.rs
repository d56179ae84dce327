//! Cross-module invariants over random inputs.

use proptest::prelude::*;
use qlb::collision_kernel::Params;
use qlb::diffusion::{d_jps, d_qdc};
use qlb::scattering::{cross_sections, s_matrix, PartialWaveTable, Potential};
use std::f64::consts::PI;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn s_matrix_is_unimodular(l in 0usize..60, kappa in 1e-3..80.0f64) {
        let s = s_matrix(l, kappa, Potential::HardSphere).unwrap();
        prop_assert!((s.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn optical_theorem(kappa in 0.01..60.0f64) {
        let t = PartialWaveTable::hard_sphere(kappa).unwrap();
        let lhs = t.f(0.0).im;
        let rhs = kappa * t.sigma_tot() / (4.0 * PI);
        prop_assert!((lhs - rhs).abs() < 1e-9 * rhs.max(1.0), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn total_cross_section_between_limits(kappa in 1e-3..100.0f64) {
        let s = cross_sections(kappa).unwrap().sigma_tot;
        prop_assert!(s > 1.9 * PI && s <= 4.0 * PI * (1.0 + 1e-9), "{}", s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn jump_constants_scale_with_density_and_mass_ratio(
        lambda in 0.01..0.5f64,
        beta in 0.5..2.0f64,
        eta in 1e-3..0.1f64,
    ) {
        let p = Params::new(lambda, beta, eta).unwrap();
        let p2 = Params::new(lambda, beta, 2.0 * eta).unwrap();
        let (j, q) = (d_jps(&p), d_qdc(&p));
        prop_assert!(j > 0.0 && q > 0.0);
        prop_assert!((d_jps(&p2) / j - 2.0).abs() < 1e-12);
        prop_assert!((d_qdc(&p2) / q - 2.0).abs() < 1e-12);
        let half = Params::new(0.5 * lambda, beta, eta).unwrap();
        prop_assert!((q / d_qdc(&half) - 4.0).abs() < 1e-12);
    }
}
