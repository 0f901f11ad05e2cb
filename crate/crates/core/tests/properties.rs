use std::sync::Arc;

use proptest::prelude::*;
use segfb_core::io::{read_field, write_field};
use segfb_core::profiles::half_plane;
use segfb_core::spectral::char_exponent;
use segfb_core::{Configuration, ExtensionGrid, Mode};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponent_solves_the_quadratic(lambda in 0.0f64..20.0, n in 1usize..5) {
        let g = char_exponent(lambda, n).unwrap();
        prop_assert!(g >= 0.0);
        prop_assert!((g * (g + n as f64 - 1.0) - lambda).abs() <= 1e-9 * (1.0 + lambda));
    }

    #[test]
    fn exponent_is_increasing(a in 0.0f64..10.0, d in 1e-3f64..5.0) {
        prop_assert!(char_exponent(a + d, 2).unwrap() > char_exponent(a, 2).unwrap());
    }

    #[test]
    fn half_plane_is_homogeneous(t in -3.0f64..3.0, z in 0.0f64..3.0, s in 0.1f64..10.0) {
        let (u, us) = (half_plane(t, z), half_plane(s * t, s * z));
        prop_assert!(u >= 0.0);
        prop_assert!((us - s.sqrt() * u).abs() <= 1e-12 * (1.0 + us));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fields_survive_a_round_trip(shift in -0.5f64..0.5, a in 0.1f64..3.0) {
        let grid = Arc::new(ExtensionGrid::new(2, &[(-1.0, 1.0), (-1.0, 1.0)], 1.0, 0.125).unwrap());
        let fs: [Box<dyn Fn(&[f64]) -> f64 + Sync>; 2] = [
            Box::new(move |x| a * half_plane(x[1] + shift, x[2])),
            Box::new(move |x| half_plane(-x[1] - shift, x[2])),
        ];
        let u = Configuration::from_fns(grid, &fs, Mode::Segregated);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.sfld");
        write_field(&p, &u).unwrap();
        let v = read_field(&p).unwrap();
        prop_assert_eq!(v.k(), 2);
        for (c, d) in u.components.iter().zip(&v.components) {
            prop_assert_eq!(c.values(), d.values());
        }
    }
}
